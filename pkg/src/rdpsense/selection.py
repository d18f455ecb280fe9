"""Shapley-value attribute ranking and per-class attribute selection.

The value of a coalition S for a target row x is the model's positive-class
score averaged over background rows whose attributes in S are replaced by
x's values (interventional imputation).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EmptyBackground, SchemaMismatch
from .schema import FeatureMatrix

log = logging.getLogger(__name__)

MAX_EXACT_ATTRIBUTES = 8
MAX_BACKGROUND = 256


@dataclass
class AttributionReport:
    class_name: str
    names: tuple[str, ...]
    contributions: np.ndarray  # targets x attributes, signed
    exact: bool = False

    @property
    def mean_abs(self) -> np.ndarray:
        return np.abs(self.contributions).mean(axis=0)

    @property
    def ranking(self) -> list[str]:
        order = np.argsort(-self.mean_abs, kind="stable")
        return [self.names[i] for i in order]

    @property
    def per_attribute(self) -> list[tuple[str, float, np.ndarray]]:
        ma = self.mean_abs
        return [(n, float(ma[i]), self.contributions[:, i]) for i, n in enumerate(self.names)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attribute", "mean_abs_contribution", "rank"])
        ma = dict(zip(self.names, self.mean_abs))
        for rank, name in enumerate(self.ranking, start=1):
            w.writerow([name, format(float(ma[name]), ".17g"), rank])
        return buf.getvalue()


def _scorer(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "_score"):
        return model._score
    if hasattr(model, "score"):
        return lambda x: np.asarray(model.score(x), dtype=float)
    return lambda x: np.asarray(model(x), dtype=float)


def _check(model, background, targets) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    names = tuple(background.names) if isinstance(background, FeatureMatrix) else None
    bg = background.values if isinstance(background, FeatureMatrix) else np.atleast_2d(np.asarray(background, float))
    tg = targets.values if isinstance(targets, FeatureMatrix) else np.atleast_2d(np.asarray(targets, float))
    if isinstance(targets, FeatureMatrix) and names is not None and targets.names != names:
        raise SchemaMismatch("background and targets have different attributes")
    schema = getattr(model, "schema", None)
    if schema is not None and names is not None and tuple(schema) != names:
        raise SchemaMismatch("model was trained on a different attribute schema")
    if len(bg) == 0:
        raise EmptyBackground("background set is empty")
    if bg.shape[1] != tg.shape[1]:
        raise SchemaMismatch(f"background has {bg.shape[1]} attributes, targets {tg.shape[1]}")
    if names is None:
        names = tuple(schema) if schema is not None else tuple(f"x{i}" for i in range(bg.shape[1]))
    return names, bg, tg


def subsample_background(matrix: FeatureMatrix, limit: int = MAX_BACKGROUND, seed: int = 0) -> FeatureMatrix:
    if len(matrix) <= limit:
        return matrix
    rng = np.random.default_rng(seed)
    return matrix.rows(np.sort(rng.choice(len(matrix), limit, replace=False)))


def coalition_values(model, background, x) -> np.ndarray:
    """v(S) for every subset S, indexed by bitmask (bit j set = attribute j from ``x``)."""
    f = _scorer(model)
    bg = np.atleast_2d(np.asarray(background, float))
    x = np.asarray(x, float).ravel()
    d = len(x)
    masks = ((np.arange(1 << d)[:, None] >> np.arange(d)) & 1).astype(bool)
    rows = np.where(masks[:, None, :], x[None, None, :], bg[None, :, :])
    vals = f(rows.reshape(-1, d)).reshape(len(masks), len(bg)).mean(axis=1)
    return vals


def exact_shapley(model, background, x) -> np.ndarray:
    """Exact Shapley values by subset enumeration (at most 8 attributes)."""
    x = np.asarray(x, float).ravel()
    d = len(x)
    if d > MAX_EXACT_ATTRIBUTES:
        raise ValueError(f"exact mode supports at most {MAX_EXACT_ATTRIBUTES} attributes, got {d}")
    v = coalition_values(model, background, x)
    sizes = np.array([bin(s).count("1") for s in range(1 << d)])
    weight = np.array([math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d) for k in range(d)])
    phi = np.zeros(d)
    for j in range(d):
        bit = 1 << j
        without = np.array([s for s in range(1 << d) if not s & bit])
        phi[j] = np.sum(weight[sizes[without]] * (v[without | bit] - v[without]))
    return phi


def shapley_rank(
    model,
    background,
    targets,
    samples_per_row: int = 32,
    seed: int = 0,
    class_name: str = "",
    exact: bool = False,
) -> AttributionReport:
    """Monte-Carlo permutation Shapley values for each target row.

    Each sample draws one permutation and one background row; attributes
    switch from the background value to the target value in permutation
    order and each is credited with the resulting change in score.
    ``exact=True`` enumerates all subsets instead.
    """
    if samples_per_row < 1:
        raise ValueError("samples_per_row must be >= 1")
    names, bg, tg = _check(model, background, targets)
    d = len(names)
    if exact:
        contrib = np.array([exact_shapley(model, bg, row) for row in tg]).reshape(len(tg), d)
        return AttributionReport(class_name, names, contrib, exact=True)

    f = _scorer(model)
    rng = np.random.default_rng(seed)
    contrib = np.zeros((len(tg), d))
    steps = np.arange(d + 1)
    for r, x in enumerate(tg):
        perms = np.argsort(rng.random((samples_per_row, d)), axis=1)
        picks = rng.integers(0, len(bg), samples_per_row)
        # rank[s, j] = position of attribute j in permutation s
        rank = np.argsort(perms, axis=1)
        switched = rank[:, None, :] < steps[None, :, None]  # samples x (d+1) x d
        rows = np.where(switched, x[None, None, :], bg[picks][:, None, :])
        scores = f(rows.reshape(-1, d)).reshape(samples_per_row, d + 1)
        deltas = np.diff(scores, axis=1)  # delta at step t credits perms[:, t]
        np.add.at(contrib[r], perms.ravel(), deltas.ravel())
    contrib /= samples_per_row
    return AttributionReport(class_name, names, contrib)


@dataclass(frozen=True)
class AttributeSelection:
    names: tuple[str, ...]
    degenerate: bool = False

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)


def select_attributes(report: AttributionReport, mass: float = 0.90, cap: int = 20) -> AttributeSelection:
    """Shortest ranking prefix holding ``mass`` of the total mean |contribution|, at most ``cap`` names.

    All-zero attributions yield an empty, ``degenerate`` selection.
    """
    if not 0 < mass <= 1:
        raise ValueError("mass must lie in (0, 1]")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if not report.names:
        raise ValueError("empty attribution report")
    ranking = report.ranking
    ma = dict(zip(report.names, report.mean_abs))
    total = float(sum(ma.values()))
    if total <= 0:
        log.warning("all attributions are zero for class %r; nothing selected", report.class_name)
        return AttributeSelection((), degenerate=True)
    chosen, running = [], 0.0
    for name in ranking:
        chosen.append(name)
        running += ma[name]
        if running / total >= mass - 1e-12 or len(chosen) == cap:
            break
    return AttributeSelection(tuple(chosen))

