"""Per-class rank/select/train flow and cross-validated ensemble evaluation.

For every training set the derived attributes, Shapley rankings, attribute
subsets and committees are fitted on the training rows only; held-out
rows are only ever transformed and predicted.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .ensemble import EnsembleModel, build_ensemble, ensemble_predict, ensemble_score
from .learners import DEFAULT_SPECS, CVResult, Metrics, ModelSpec, confusion, cross_validate, stratified_folds, train
from .schema import FeatureMatrix
from .selection import (
    AttributeSelection,
    AttributionReport,
    select_attributes,
    shapley_rank,
    subsample_background,
)
from .transforms import DerivedAttributes
from .windowing import CLASSES

log = logging.getLogger(__name__)

RANK_SPEC = ModelSpec.make("RandomForest", n_trees=30, name="rank-forest")


@dataclass(frozen=True)
class PipelineConfig:
    folds: int = 5
    inner_folds: int = 10
    seed: int = 0
    components: int = 20
    dct_index: int = 1
    select_mass: float = 0.90
    select_cap: int = 20
    shapley_targets: int = 64
    shapley_samples: int = 8
    background: int = 256
    rank_spec: ModelSpec = RANK_SPEC
    specs: tuple[ModelSpec, ...] = DEFAULT_SPECS
    transport: str = "TCP"

    def to_dict(self) -> dict:
        return {
            "folds": self.folds, "inner_folds": self.inner_folds, "seed": self.seed,
            "components": self.components, "dct_index": self.dct_index,
            "select_mass": self.select_mass, "select_cap": self.select_cap,
            "shapley_targets": self.shapley_targets, "shapley_samples": self.shapley_samples,
            "background": self.background, "rank_spec": self.rank_spec.to_dict(),
            "specs": [s.to_dict() for s in self.specs], "transport": self.transport,
        }


def _with_seed(spec: ModelSpec, seed: int) -> ModelSpec:
    return ModelSpec(spec.kind, spec.params, seed, spec.name)


def rank_class(data: FeatureMatrix, y, class_name: str, cfg: PipelineConfig, seed: int = 0) -> AttributionReport:
    """Shapley ranking of every attribute for one class, explained on a forest."""
    y = np.asarray(y, dtype=bool)
    model = train(_with_seed(cfg.rank_spec, seed), data, y)
    background = subsample_background(data, cfg.background, seed)
    rng = np.random.default_rng([seed, 1])
    n = min(cfg.shapley_targets, len(data))
    targets = data.rows(np.sort(rng.choice(len(data), n, replace=False)))
    return shapley_rank(model, background, targets, cfg.shapley_samples, seed, class_name)


def _selection(report: AttributionReport, cfg: PipelineConfig) -> AttributeSelection:
    sel = select_attributes(report, cfg.select_mass, cfg.select_cap)
    if not sel.names:
        # nothing carries signal; fall back to the head of the (tied) ranking
        return AttributeSelection(tuple(report.ranking[: cfg.select_cap]), degenerate=True)
    return sel


@dataclass
class ClassFit:
    class_name: str
    report: AttributionReport
    selection: AttributeSelection
    cv: dict[str, CVResult]


@dataclass
class TrainedPipeline:
    derived: DerivedAttributes
    classes: dict[str, ClassFit]
    ensemble: EnsembleModel

    def predict(self, base: FeatureMatrix, row_ids=None) -> np.ndarray:
        return ensemble_predict(self.ensemble, self.derived.transform(base, row_ids))

    def to_dict(self) -> dict:
        return {
            "derived": self.derived.to_dict(),
            "selections": {c: {"names": list(f.selection.names), "degenerate": f.selection.degenerate}
                           for c, f in self.classes.items()},
            "cross_validation": {c: [r.summary() for r in f.cv.values()] for c, f in self.classes.items()},
            "ensemble": self.ensemble.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedPipeline":
        # rankings and CV folds are not persisted; only what prediction needs
        return cls(DerivedAttributes.from_dict(d["derived"]), {}, EnsembleModel.from_dict(d["ensemble"]))


def fit_pipeline(base: FeatureMatrix, labels, cfg: PipelineConfig = PipelineConfig(), row_ids=None, seed: int | None = None) -> TrainedPipeline:
    """Derived attributes, per-class ranking and selection, CV and committees on ``base``."""
    seed = cfg.seed if seed is None else seed
    labels = np.asarray(labels, dtype=bool)
    derived = DerivedAttributes(cfg.components, cfg.dct_index, seed).fit(base, row_ids)
    full = derived.transform(base)
    classes: dict[str, ClassFit] = {}
    cv_results: dict[tuple[str, str], CVResult] = {}
    trained = {}
    for j, cls in enumerate(CLASSES):
        y = labels[:, j]
        report = rank_class(full, y, cls, cfg, seed + j)
        sel = _selection(report, cfg)
        data = full.select(sel.names)
        cv = {}
        for spec in cfg.specs:
            spec = _with_seed(spec, seed + j)
            res = cross_validate(spec, data, y, cfg.inner_folds, seed + j)
            cv[spec.name] = cv_results[(cls, spec.name)] = res
        # only committee members need the full-data fit
        picked = build_ensemble({k: v for k, v in cv_results.items() if k[0] == cls}, _Lazy(cls, data, y, cfg, seed + j))
        for m in picked.committees[cls].members:
            trained[(cls, m.spec.name)] = m
        classes[cls] = ClassFit(cls, report, sel, cv)
        log.info("%s: %d attributes, committee %s", cls, len(sel), [m.spec.name for m in picked.committees[cls].members])
    ensemble = build_ensemble(cv_results, trained, cfg.transport, {"seed": seed, "inner_folds": cfg.inner_folds})
    return TrainedPipeline(derived, classes, ensemble)


class _Lazy(dict):
    """Trains a spec on first lookup of ``(class, spec name)``."""

    def __init__(self, cls, data, y, cfg, seed):
        super().__init__()
        self._args = (data, y)
        self._specs = {s.name: _with_seed(s, seed) for s in cfg.specs}

    def __missing__(self, key):
        model = train(self._specs[key[1]], *self._args)
        self[key] = model
        return model


@dataclass
class Evaluation:
    per_class: dict[str, Metrics]
    fold_scores: list[float]
    predictions: np.ndarray
    committees: list[dict[str, list[str]]] = field(default_factory=list)
    selections: list[dict[str, tuple[str, ...]]] = field(default_factory=list)

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.fold_scores))

    def report_csv(self, transport: str = "TCP") -> str:
        """Per-class confusion and metrics as one table row per class."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Profile", "Class", "TP", "FP", "FN", "TN", "Accuracy", "Precision", "Recall", "F1"])
        for cls, m in self.per_class.items():
            r = m.rounded()
            w.writerow([transport, cls, m.tp, m.fp, m.fn, m.tn,
                        f"{r['accuracy']:.2f}", f"{r['precision']:.2f}", f"{r['recall']:.2f}", f"{r['f1']:.2f}"])
        return buf.getvalue()

    def scores_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "ensemble_score"])
        for i, s in enumerate(self.fold_scores):
            w.writerow([i, format(s, ".17g")])
        return buf.getvalue()


def outer_folds(labels, folds: int, seed: int) -> list[np.ndarray]:
    """Folds stratified on the full label combination, dealt round-robin."""
    labels = np.asarray(labels, dtype=bool)
    codes = labels @ (1 << np.arange(labels.shape[1]))
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for code in np.unique(codes):
        members = rng.permutation(np.flatnonzero(codes == code))
        assign[members] = (np.arange(len(members)) + offset) % folds
        offset = (offset + len(members)) % folds
    return [np.flatnonzero(assign == f) for f in range(folds)]


def evaluate(base: FeatureMatrix, labels, cfg: PipelineConfig = PipelineConfig()) -> Evaluation:
    """Outer k-fold evaluation: fit on k-1 folds, predict the held-out fold."""
    labels = np.asarray(labels, dtype=bool)
    if len(labels) != len(base):
        raise ValueError(f"{len(base)} rows but {len(labels)} label rows")
    for j, cls in enumerate(CLASSES):
        # raises StratificationError early when a class is too rare
        stratified_folds(labels[:, j], cfg.folds, cfg.seed)
    pred = np.zeros_like(labels)
    scores, committees, selections = [], [], []
    everything = np.arange(len(labels))
    for f, test in enumerate(outer_folds(labels, cfg.folds, cfg.seed)):
        tr = np.setdiff1d(everything, test, assume_unique=True)
        fitted = fit_pipeline(base.rows(tr), labels[tr], cfg, row_ids=tr, seed=cfg.seed + 1000 * f)
        pred[test] = fitted.predict(base.rows(test), row_ids=test)
        scores.append(ensemble_score(pred[test], labels[test]))
        committees.append({c: [m.spec.name for m in k.members] for c, k in fitted.ensemble.committees.items()})
        selections.append({c: fit.selection.names for c, fit in fitted.classes.items()})
        log.info("fold %d: ensemble score %.2f", f, scores[-1])
    per_class = {cls: confusion(pred[:, j], labels[:, j]) for j, cls in enumerate(CLASSES)}
    return Evaluation(per_class, scores, pred, committees, selections)
