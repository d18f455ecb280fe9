"""Binary learners, stratified cross-validation and confusion-count metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyConfusion, EmptyData, SchemaMismatch, SingleClassData, StratificationError
from .schema import FeatureMatrix

MODEL_FORMAT_VERSION = 1

KINDS = ("KNN", "DecisionTree", "RandomForest", "AdaBoost")

DEFAULT_PARAMS = {
    "KNN": {"k": 5},
    "DecisionTree": {"max_depth": 12, "min_leaf": 2},
    "RandomForest": {"n_trees": 100, "max_depth": 12, "min_leaf": 1, "max_features": "sqrt"},
    "AdaBoost": {"rounds": 100},
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: tuple = ()
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(dict(self.params))
        unknown = set(merged) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}")
        for key in ("k", "n_trees", "rounds", "max_depth", "min_leaf"):
            if key in merged and int(merged[key]) < 1:
                raise ValueError(f"{self.kind}: {key} must be >= 1")
        object.__setattr__(self, "params", tuple(sorted(merged.items())))
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @classmethod
    def make(cls, kind: str, seed: int = 0, name: str = "", **params) -> "ModelSpec":
        return cls(kind, tuple(params.items()), seed, name)

    @property
    def hyper(self) -> dict:
        return dict(self.params)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.hyper, "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["kind"], tuple(d["params"].items()), d["seed"], d.get("name", ""))


DEFAULT_SPECS = (
    ModelSpec("KNN"),
    ModelSpec("DecisionTree"),
    ModelSpec("RandomForest"),
    ModelSpec("AdaBoost"),
)


# --- trained models ----------------------------------------------------------


class TrainedModel:
    """Common surface: ``score`` in [0, 1] for the positive class, ``predict`` = score >= 0.5."""

    spec: ModelSpec
    schema: tuple[str, ...]

    def _matrix(self, data) -> np.ndarray:
        if isinstance(data, FeatureMatrix):
            if data.names != self.schema:
                return data.columns(self.schema)
            return data.values
        x = np.asarray(data, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != len(self.schema):
            raise SchemaMismatch(f"rows have {x.shape[1]} values, model expects {len(self.schema)}")
        return x

    def score(self, data) -> np.ndarray:
        return self._score(self._matrix(data))

    def predict(self, data) -> np.ndarray:
        return self.score(data) >= 0.5

    def _score(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "schema": list(self.schema),
            "state": self._state(),
        }

    def _state(self) -> dict:
        raise NotImplementedError


def _zscore_params(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


class KNNModel(TrainedModel):
    """Euclidean k-nearest neighbours on z-scored attributes; ties by training row order."""

    def __init__(self, spec, schema, x, y, mean=None, scale=None):
        self.spec, self.schema = spec, tuple(schema)
        if mean is None:
            mean, scale = _zscore_params(x)
        self.mean, self.scale = np.asarray(mean, float), np.asarray(scale, float)
        self.train_z = (np.asarray(x, float) - self.mean) / self.scale
        self.train_y = np.asarray(y, dtype=bool)
        self.k = min(int(spec.hyper["k"]), len(self.train_y))

    def _score(self, x):
        z = (x - self.mean) / self.scale
        out = np.empty(len(z))
        sq_train = np.einsum("ij,ij->i", self.train_z, self.train_z)
        for lo in range(0, len(z), 512):
            q = z[lo : lo + 512]
            d = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ self.train_z.T + sq_train[None, :]
            nn = np.argsort(d, axis=1, kind="stable")[:, : self.k]
            out[lo : lo + 512] = self.train_y[nn].mean(axis=1)
        return out

    def _state(self):
        raw = self.train_z * self.scale + self.mean
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "x": raw.tolist(), "y": self.train_y.astype(int).tolist()}

    @classmethod
    def from_state(cls, spec, schema, s):
        n = len(s["y"])
        x = np.array(s["x"], float).reshape(n, len(schema))
        return cls(spec, schema, x, np.array(s["y"], bool), s["mean"], s["scale"])


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf whose ``value`` is the positive fraction."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add(self, feature=-1, threshold=0.0, value=0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(x), dtype=np.int64)
        active = np.flatnonzero(feat[node] >= 0)
        while len(active):
            nd = node[active]
            go_left = x[active, feat[nd]] <= thr[nd]
            node[active] = np.where(go_left, left[nd], right[nd])
            active = active[feat[node[active]] >= 0]
        return node

    def leaf_values(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.value)[self.apply(x)]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(list(d["feature"]), [float(t) for t in d["threshold"]],
                   list(d["left"]), list(d["right"]), [float(v) for v in d["value"]])


def _best_split(x, y, w, features, min_leaf):
    """Weighted-Gini best split over ``features`` (in order).

    Returns ``(feature, threshold, impurity)`` or ``None``. The first feature
    reaching the minimum wins, and within a feature the lowest threshold.
    """
    m = len(y)
    wy = w * y
    total_w, total_pos = w.sum(), wy.sum()
    parent = total_w - (total_pos**2 + (total_w - total_pos) ** 2) / total_w
    best = None
    best_imp = parent - 1e-12 * max(total_w, 1.0)
    counts = np.arange(1, m)
    ok_count = (counts >= min_leaf) & (m - counts >= min_leaf)
    if not ok_count.any():
        return None
    for j in features:
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        cw = np.cumsum(w[order])[:-1]
        cp = np.cumsum(wy[order])[:-1]
        valid = ok_count & (xs[1:] > xs[:-1])
        if not valid.any():
            continue
        rw = total_w - cw
        rp = total_pos - cp
        with np.errstate(divide="ignore", invalid="ignore"):
            imp = (cw - (cp**2 + (cw - cp) ** 2) / cw) + (rw - (rp**2 + (rw - rp) ** 2) / rw)
        imp = np.where(valid & (cw > 0) & (rw > 0), imp, np.inf)
        i = int(np.argmin(imp))
        if imp[i] < best_imp:
            lo, hi = xs[i], xs[i + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best, best_imp = (int(j), float(thr), float(imp[i])), imp[i]
    return best


def grow_tree(x, y, w=None, max_depth=12, min_leaf=2, max_features=None, rng=None) -> Tree:
    """CART tree on boolean ``y`` with optional sample weights.

    With ``max_features`` set, each split considers that many attributes
    drawn by ``rng`` (kept in attribute order).
    """
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    d = x.shape[1]
    tree = Tree()
    stack = [(np.arange(len(y)), 0, tree.add())]
    while stack:
        idx, depth, node = stack.pop()
        wn, yn = w[idx], y[idx]
        tw = wn.sum()
        tree.value[node] = float((wn * yn).sum() / tw) if tw > 0 else 0.0
        if depth >= max_depth or len(idx) < 2 * min_leaf or yn.min() == yn.max():
            continue
        if max_features is not None and max_features < d:
            feats = np.sort(rng.choice(d, max_features, replace=False))
        else:
            feats = range(d)
        split = _best_split(x[idx], yn, wn, feats, min_leaf)
        if split is None:
            continue
        j, thr, _ = split
        go_left = x[idx, j] <= thr
        tree.feature[node], tree.threshold[node] = j, thr
        left, right = tree.add(), tree.add()
        tree.left[node], tree.right[node] = left, right
        stack.append((idx[~go_left], depth + 1, right))
        stack.append((idx[go_left], depth + 1, left))
    return tree


class TreeModel(TrainedModel):
    def __init__(self, spec, schema, tree: Tree):
        self.spec, self.schema, self.tree = spec, tuple(schema), tree

    def _score(self, x):
        return self.tree.leaf_values(x)

    def _state(self):
        return {"tree": self.tree.to_dict()}

    @classmethod
    def from_state(cls, spec, schema, s):
        return cls(spec, schema, Tree.from_dict(s["tree"]))


class ForestModel(TrainedModel):
    """Score is the fraction of member trees voting positive."""

    def __init__(self, spec, schema, trees: list[Tree]):
        self.spec, self.schema, self.trees = spec, tuple(schema), trees

    def tree_votes(self, x) -> np.ndarray:
        x = self._matrix(x)
        return np.array([t.leaf_values(x) >= 0.5 for t in self.trees])

    def _score(self, x):
        votes = np.zeros(len(x))
        for t in self.trees:
            votes += t.leaf_values(x) >= 0.5
        return votes / len(self.trees)

    def _state(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_state(cls, spec, schema, s):
        return cls(spec, schema, [Tree.from_dict(t) for t in s["trees"]])


ALPHA_CAP = math.log((1 - 1e-10) / 1e-10)


class AdaBoostModel(TrainedModel):
    """SAMME over depth-1 stumps; score is the alpha-weighted share of positive votes."""

    def __init__(self, spec, schema, stumps: list[Tree], alphas: list[float]):
        self.spec, self.schema = spec, tuple(schema)
        self.stumps, self.alphas = stumps, [float(a) for a in alphas]

    def staged_scores(self, data):
        x = self._matrix(data)
        num = np.zeros(len(x))
        den = 0.0
        for stump, a in zip(self.stumps, self.alphas):
            num += a * (stump.leaf_values(x) >= 0.5)
            den += a
            yield num / den

    def _score(self, x):
        num = np.zeros(len(x))
        for stump, a in zip(self.stumps, self.alphas):
            num += a * (stump.leaf_values(x) >= 0.5)
        return num / sum(self.alphas)

    def _state(self):
        return {"stumps": [s.to_dict() for s in self.stumps], "alphas": self.alphas}

    @classmethod
    def from_state(cls, spec, schema, s):
        return cls(spec, schema, [Tree.from_dict(t) for t in s["stumps"]], s["alphas"])


def _fit_adaboost(x, y, rounds):
    n = len(y)
    w = np.full(n, 1.0 / n)
    stumps, alphas = [], []
    for _ in range(rounds):
        stump = grow_tree(x, y, w, max_depth=1, min_leaf=1)
        miss = (stump.leaf_values(x) >= 0.5) != y
        err = float(w[miss].sum() / w.sum())
        if err <= 0.0:
            stumps.append(stump)
            alphas.append(ALPHA_CAP)
            break
        if err >= 0.5:
            if not stumps:
                stumps.append(stump)
                alphas.append(1.0)
            break
        alpha = math.log((1.0 - err) / err)
        stumps.append(stump)
        alphas.append(alpha)
        w = w * np.exp(alpha * miss)
        w /= w.sum()
    return stumps, alphas


def train(spec: ModelSpec, data: FeatureMatrix, labels) -> TrainedModel:
    """Fit one learner; deterministic given ``spec.seed``."""
    x = data.values
    y = np.asarray(labels, dtype=bool).ravel()
    if len(y) == 0 or x.shape[0] == 0:
        raise EmptyData("no training rows")
    if len(y) != x.shape[0]:
        raise SchemaMismatch(f"{x.shape[0]} rows but {len(y)} labels")
    hp = spec.hyper
    if spec.kind == "KNN":
        return KNNModel(spec, data.names, x, y)
    if y.all() or not y.any():
        raise SingleClassData(f"{spec.kind} needs both classes in the training labels")
    if spec.kind == "DecisionTree":
        return TreeModel(spec, data.names, grow_tree(x, y, None, hp["max_depth"], hp["min_leaf"]))
    if spec.kind == "RandomForest":
        rng = np.random.default_rng(spec.seed)
        d = x.shape[1]
        mf = hp["max_features"]
        if mf == "sqrt":
            mf = max(1, int(math.sqrt(d)))
        elif mf is None or mf == "all":
            mf = d
        trees = []
        for _ in range(int(hp["n_trees"])):
            boot = rng.integers(0, len(y), len(y))
            trees.append(grow_tree(x[boot], y[boot], None, hp["max_depth"], hp["min_leaf"], int(mf), rng))
        return ForestModel(spec, data.names, trees)
    stumps, alphas = _fit_adaboost(x, y, int(hp["rounds"]))
    return AdaBoostModel(spec, data.names, stumps, alphas)


_MODEL_CLASSES = {"KNN": KNNModel, "DecisionTree": TreeModel, "RandomForest": ForestModel, "AdaBoost": AdaBoostModel}


def model_from_dict(d: dict) -> TrainedModel:
    if d.get("format") != MODEL_FORMAT_VERSION:
        raise SchemaMismatch(f"unsupported model format {d.get('format')!r}")
    spec = ModelSpec.from_dict(d["spec"])
    return _MODEL_CLASSES[spec.kind].from_state(spec, tuple(d["schema"]), d["state"])


# --- metrics and cross-validation -------------------------------------------


@dataclass(frozen=True)
class Metrics:
    """Percentages computed from confusion counts."""

    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False

    def rounded(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "accuracy": round(self.accuracy, 2), "precision": round(self.precision, 2),
            "recall": round(self.recall, 2), "f1": round(self.f1, 2),
        }


def compute_metrics(tp: int, fp: int, tn: int, fn: int) -> Metrics:
    """Accuracy/precision/recall/F1 in percent; empty denominators give 0 and a flag."""
    if min(tp, fp, tn, fn) < 0:
        raise ValueError("confusion counts must be non-negative")
    total = tp + fp + tn + fn
    if total == 0:
        raise EmptyConfusion("confusion counts sum to zero")
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(
        int(tp), int(fp), int(tn), int(fn),
        accuracy=100.0 * (tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1,
        precision_undefined=tp + fp == 0,
        recall_undefined=tp + fn == 0,
    )


def confusion(pred, truth) -> Metrics:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    return compute_metrics(
        int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
        int(np.sum(~pred & ~truth)), int(np.sum(~pred & truth)),
    )


def stratified_folds(labels, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Shuffle each class with ``seed`` and deal its rows round-robin over the folds.

    Dealing continues across classes from where the previous class stopped,
    so fold sizes also differ by at most one.
    """
    y = np.asarray(labels, dtype=bool).ravel()
    if folds < 2:
        raise StratificationError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (True, False):
        members = np.flatnonzero(y == cls)
        if len(members) < folds:
            raise StratificationError(
                f"class {'positive' if cls else 'negative'} has {len(members)} rows, fewer than {folds} folds"
            )
        members = rng.permutation(members)
        assign[members] = (np.arange(len(members)) + offset) % folds
        offset = (offset + len(members)) % folds
    return [np.flatnonzero(assign == f) for f in range(folds)]


@dataclass
class CVResult:
    spec: ModelSpec
    fold_metrics: list[Metrics]
    folds: list[np.ndarray]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([m.accuracy for m in self.fold_metrics])

    @property
    def mean_accuracy(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std_accuracy(self) -> float:
        a = self.accuracies
        return float(a.std(ddof=1)) if len(a) > 1 else 0.0

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(m, attr) for m in self.fold_metrics]))

    @property
    def precision(self) -> float:
        return self.mean("precision")

    @property
    def recall(self) -> float:
        return self.mean("recall")

    @property
    def f1(self) -> float:
        return self.mean("f1")

    def summary(self) -> dict:
        return {
            "spec": self.spec.name,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def cross_validate(spec: ModelSpec, data: FeatureMatrix, labels, folds: int = 10, seed: int = 0) -> CVResult:
    y = np.asarray(labels, dtype=bool).ravel()
    parts = stratified_folds(y, folds, seed)
    everything = np.arange(len(y))
    metrics = []
    for test in parts:
        train_idx = np.setdiff1d(everything, test, assume_unique=True)
        model = train(spec, data.rows(train_idx), y[train_idx])
        metrics.append(confusion(model.predict(data.rows(test)), y[test]))
    return CVResult(spec, metrics, parts)


def specs_from_names(names: Sequence[str], seed: int = 0) -> list[ModelSpec]:
    return [ModelSpec(n, seed=seed) for n in names]
