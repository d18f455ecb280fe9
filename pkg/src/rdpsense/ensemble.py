"""Per-class three-member voting committees and the penalized ensemble score."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InsufficientModels, NoPositives, SchemaMismatch
from .learners import CVResult, Metrics, TrainedModel, model_from_dict
from .schema import FeatureMatrix
from .windowing import CLASSES

COMMITTEE_SIZE = 3
VOTES_NEEDED = 2
TRUE_POSITIVE_POINTS = 1
FALSE_POSITIVE_POINTS = -2
ENSEMBLE_FORMAT_VERSION = 1


@dataclass
class Committee:
    class_name: str
    members: list[TrainedModel]
    precisions: list[float]
    recalls: list[float] = field(default_factory=list)

    def votes(self, data) -> np.ndarray:
        """Members x rows boolean votes."""
        return np.array([m.predict(data) for m in self.members])

    def predict(self, data) -> np.ndarray:
        return self.votes(data).sum(axis=0) >= VOTES_NEEDED


@dataclass
class EnsembleModel:
    committees: dict[str, Committee]
    transport_profile: str = "TCP"
    fold_seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, c in self.committees.items():
            if len(c.members) != COMMITTEE_SIZE:
                raise InsufficientModels(f"class {name} has {len(c.members)} members, need {COMMITTEE_SIZE}")

    def to_dict(self) -> dict:
        return {
            "format": ENSEMBLE_FORMAT_VERSION,
            "transport_profile": self.transport_profile,
            "fold_seeds": self.fold_seeds,
            "classes": {
                name: {
                    "members": [m.spec.to_dict() for m in c.members],
                    "precisions": c.precisions,
                    "recalls": c.recalls,
                    "models": [m.to_dict() for m in c.members],
                }
                for name, c in self.committees.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        if d.get("format") != ENSEMBLE_FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported ensemble format {d.get('format')!r}")
        committees = {
            name: Committee(name, [model_from_dict(m) for m in c["models"]], c["precisions"], c.get("recalls", []))
            for name, c in d["classes"].items()
        }
        return cls(committees, d["transport_profile"], d.get("fold_seeds", {}))


def _rank_key(m) -> tuple[float, float, float]:
    return (m.precision, m.recall, m.f1)


def build_ensemble(
    cv_results: Mapping[tuple[str, str], CVResult | Metrics],
    trained: Mapping[tuple[str, str], TrainedModel],
    transport_profile: str = "TCP",
    fold_seeds: dict | None = None,
) -> EnsembleModel:
    """Pick, per class, the three specs with the highest cross-validated precision.

    Ties fall to recall, then F1, then the insertion order of ``cv_results``.
    Keys of both mappings are ``(class_name, spec_name)``.
    """
    per_class: dict[str, list[tuple[int, str, object]]] = {}
    for order, ((cls, spec), res) in enumerate(cv_results.items()):
        per_class.setdefault(cls, []).append((order, spec, res))
    committees = {}
    for cls, entries in per_class.items():
        if len(entries) < COMMITTEE_SIZE:
            raise InsufficientModels(f"class {cls}: {len(entries)} evaluated specs, need {COMMITTEE_SIZE}")
        ranked = sorted(entries, key=lambda e: tuple(-v for v in _rank_key(e[2])) + (e[0],))
        top = ranked[:COMMITTEE_SIZE]
        committees[cls] = Committee(
            cls,
            [trained[(cls, spec)] for _, spec, _ in top],
            [float(res.precision) for _, _, res in top],
            [float(res.recall) for _, _, res in top],
        )
    return EnsembleModel(committees, transport_profile, dict(fold_seeds or {}))


def ensemble_predict(e: EnsembleModel, rows) -> np.ndarray:
    """Rows x 5 boolean predictions in fixed class order; a class is present on >= 2 of 3 votes.

    ``rows`` may be a single FeatureVector-like 1-D array only if every
    member shares one schema; pass a FeatureMatrix otherwise.
    """
    if not isinstance(rows, FeatureMatrix):
        x = np.atleast_2d(np.asarray(getattr(rows, "values", rows), dtype=float))
        schemas = {m.schema for c in e.committees.values() for m in c.members}
        if len(schemas) != 1:
            raise SchemaMismatch("members use different attribute subsets; pass a FeatureMatrix")
        (schema,) = schemas
        if x.shape[1] != len(schema):
            raise SchemaMismatch(f"rows have {x.shape[1]} values, members expect {len(schema)}")
        rows = FeatureMatrix(x, schema)
    out = np.zeros((len(rows), len(CLASSES)), dtype=bool)
    for j, cls in enumerate(CLASSES):
        if cls in e.committees:
            out[:, j] = e.committees[cls].predict(rows)
    return out


def row_points(pred, truth) -> np.ndarray:
    pred = np.atleast_2d(np.asarray(pred, dtype=bool))
    truth = np.atleast_2d(np.asarray(truth, dtype=bool))
    tp = (pred & truth).sum(axis=1)
    fp = (pred & ~truth).sum(axis=1)
    return TRUE_POSITIVE_POINTS * tp + FALSE_POSITIVE_POINTS * fp


def ensemble_score(predictions, truths) -> float:
    """100 * (sum of +1 per true positive and -2 per false positive) / total positive labels."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=bool))
    truth = np.atleast_2d(np.asarray(truths, dtype=bool))
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    positives = int(truth.sum())
    if positives == 0:
        raise NoPositives("test set has no positive labels")
    return 100.0 * float(row_points(pred, truth).sum()) / positives
