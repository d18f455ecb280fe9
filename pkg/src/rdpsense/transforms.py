"""Derived attributes: one DCT coefficient per row, SVD and ICA projections."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ArityMismatch, DegenerateMatrix, IndexOutOfRange
from .schema import BASE_ATTRIBUTES, N_COMPONENTS, FeatureMatrix

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


def dct_component(row, index: int = 1) -> float:
    """Coefficient ``index`` of the orthonormal DCT-II of ``row``."""
    x = np.asarray(row, dtype=float).ravel()
    n = len(x)
    if n == 0 or not 0 <= index < n:
        raise IndexOutOfRange(f"DCT index {index} outside [0, {n})")
    c = np.sqrt(1.0 / n) if index == 0 else np.sqrt(2.0 / n)
    k = np.arange(n)
    return float(c * np.dot(x, np.cos(np.pi * (2 * k + 1) * index / (2 * n))))


def dct_column(matrix: np.ndarray, index: int = 1) -> np.ndarray:
    """:func:`dct_component` applied to every row."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = m.shape[1]
    if n == 0 or not 0 <= index < n:
        raise IndexOutOfRange(f"DCT index {index} outside [0, {n})")
    c = np.sqrt(1.0 / n) if index == 0 else np.sqrt(2.0 / n)
    basis = c * np.cos(np.pi * (2 * np.arange(n) + 1) * index / (2 * n))
    return m @ basis


@dataclass
class Projection:
    """Maps a raw attribute row to ``k`` coordinates: ``basis.T @ ((row - mean) / scale)``."""

    kind: str
    mean: np.ndarray
    scale: np.ndarray
    basis: np.ndarray
    k: int
    singular_values: np.ndarray | None = None
    seed: int | None = None
    converged: bool = True
    n_iter: int = 0
    near_gaussian: int = 0

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "k": self.k,
            "seed": self.seed,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "near_gaussian": self.near_gaussian,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "rows": int(self.basis.shape[0]),
            "basis": self.basis.ravel().tolist(),
        }
        if self.singular_values is not None:
            doc["singular_values"] = self.singular_values.tolist()
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Projection":
        d = json.loads(text)
        sv = d.get("singular_values")
        return cls(
            kind=d["kind"],
            k=d["k"],
            seed=d["seed"],
            converged=d["converged"],
            n_iter=d["n_iter"],
            near_gaussian=d.get("near_gaussian", 0),
            mean=np.array(d["mean"], dtype=float),
            scale=np.array(d["scale"], dtype=float),
            basis=np.array(d["basis"], dtype=float).reshape(d["rows"], d["k"]),
            singular_values=None if sv is None else np.array(sv, dtype=float),
        )


def project(p: Projection, row) -> np.ndarray:
    """Project one row (1-D) or many rows (2-D)."""
    x = np.asarray(row, dtype=float)
    if x.shape[-1] != len(p.mean):
        raise ArityMismatch(f"row has {x.shape[-1]} values, projection expects {len(p.mean)}")
    return ((x - p.mean) / p.scale) @ p.basis


def _standardize(a: np.ndarray, standardize: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not np.all(np.isfinite(a)):
        raise DegenerateMatrix("matrix contains NaN or Inf")
    if a.shape[0] < 2 or len(np.unique(a, axis=0)) < 2:
        raise DegenerateMatrix("need at least 2 distinct rows")
    if not standardize:
        return a, np.zeros(a.shape[1]), np.ones(a.shape[1])
    mean = a.mean(axis=0)
    scale = a.std(axis=0, ddof=1)
    scale[scale == 0] = 1.0
    return (a - mean) / scale, mean, scale


def _values(matrix) -> np.ndarray:
    return matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=float)


def fit_svd(matrix, k: int = N_COMPONENTS, standardize: bool = True) -> Projection:
    """Rank-``k`` truncated SVD of the (standardized) matrix.

    ``basis = V / sigma``, so projecting a training row gives its row of U.
    Components whose singular value is numerically zero get a zero basis
    column.
    """
    a = _values(matrix)
    z, mean, scale = _standardize(a, standardize)
    if not 1 <= k <= min(z.shape):
        raise ValueError(f"k={k} outside [1, {min(z.shape)}]")
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    s, v = s[:k], vt[:k].T
    keep = s > RANK_TOL * max(s[0], 1.0)
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return Projection("SVD", mean, scale, v * inv, k, singular_values=s)


def numerical_rank(matrix, standardize: bool = True) -> int:
    z, _, _ = _standardize(_values(matrix), standardize)
    s = np.linalg.svd(z, compute_uv=False)
    return int(np.sum(s > RANK_TOL * max(s[0], 1.0)))


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    # W <- (W W^T)^(-1/2) W
    vals, vecs = np.linalg.eigh(w @ w.T)
    return (vecs * (1.0 / np.sqrt(vals))) @ vecs.T @ w


def fit_ica(
    matrix,
    k: int = N_COMPONENTS,
    seed: int = 0,
    standardize: bool = True,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> Projection:
    """FastICA (log-cosh contrast, symmetric decorrelation) on ``k`` whitened dimensions.

    Failure to converge is logged and reported through ``converged``; it is
    not an error. ``near_gaussian`` counts recovered components whose excess
    kurtosis is within three standard errors of zero, for which the rotation
    is not identifiable.
    """
    a = _values(matrix)
    z, mean, scale = _standardize(a, standardize)
    n = z.shape[0]
    zc = z - z.mean(axis=0)
    _, s, vt = np.linalg.svd(zc, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * max(s[0], 1.0)))
    if not 1 <= k <= rank:
        raise DegenerateMatrix(f"k={k} exceeds whitened rank {rank}")
    # whitening: x -> (x @ V_k) * sqrt(n) / s_k gives unit population variance
    whiten = vt[:k].T * (np.sqrt(n) / s[:k])
    x = (zc @ whiten).T  # k x n

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((k, k)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        wx = w @ x
        g = np.tanh(wx)
        g_prime = 1.0 - g * g
        w_new = _sym_decorrelate(g @ x.T / n - g_prime.mean(axis=1)[:, None] * w)
        lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if lim < tol:
            converged = True
            break
    if not converged:
        log.warning("ICA did not converge within %d iterations", max_iter)

    # sources are computed from z (not zc); fold the centering offset into mean
    basis = whiten @ w.T
    sources = x.T @ w.T
    kurt = np.mean(sources**4, axis=0) - 3.0
    near_gaussian = int(np.sum(np.abs(kurt) < 3.0 * np.sqrt(24.0 / n)))
    mean = mean + z.mean(axis=0) * scale
    return Projection(
        "ICA", mean, scale, basis, k,
        seed=seed, converged=converged, n_iter=it, near_gaussian=near_gaussian,
    )


@dataclass
class DerivedAttributes:
    """Fits the DCT/SVD/ICA attributes on training rows and applies them to any rows.

    The DCT coefficient is taken over the base attributes standardized with
    the training statistics. When the training matrix has rank below
    ``k``, the surplus SVD/ICA columns are identically zero.
    """

    k: int = N_COMPONENTS
    dct_index: int = 1
    seed: int = 0
    svd: Projection | None = None
    ica: Projection | None = None
    base_names: tuple[str, ...] = BASE_ATTRIBUTES
    training_rows: frozenset = field(default_factory=frozenset)

    def fit(self, base: FeatureMatrix, row_ids=None) -> "DerivedAttributes":
        a = base.columns(self.base_names)
        self.svd = fit_svd(a, min(self.k, min(a.shape)))
        rank = numerical_rank(a)
        k_ica = min(self.k, rank)
        self.ica = fit_ica(a, k_ica, seed=self.seed)
        self.training_rows = frozenset(() if row_ids is None else (int(i) for i in row_ids))
        return self

    def _pad(self, coords: np.ndarray) -> np.ndarray:
        out = np.zeros((coords.shape[0], self.k))
        out[:, : coords.shape[1]] = coords
        return out

    def transform(self, base: FeatureMatrix, row_ids=None) -> FeatureMatrix:
        """Base attributes followed by ``dct_col``, ``svd0..``, ``ica0..``.

        ``row_ids`` marks held-out rows; they must not overlap the rows the
        projections were fitted on.
        """
        if self.svd is None or self.ica is None:
            raise RuntimeError("DerivedAttributes.transform called before fit")
        if row_ids is not None and self.training_rows:
            leaked = self.training_rows.intersection(int(i) for i in row_ids)
            assert not leaked, f"held-out rows used for fitting: {sorted(leaked)[:5]}"
        a = base.columns(self.base_names)
        z = (a - self.svd.mean) / self.svd.scale
        derived = np.column_stack(
            [dct_column(z, self.dct_index), self._pad(project(self.svd, a)), self._pad(project(self.ica, a))]
        )
        names = ("dct_col",) + tuple(f"svd{i}" for i in range(self.k)) + tuple(f"ica{i}" for i in range(self.k))
        return FeatureMatrix(np.hstack([a, derived]), self.base_names + names)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "dct_index": self.dct_index,
            "seed": self.seed,
            "svd": json.loads(self.svd.to_json()),
            "ica": json.loads(self.ica.to_json()),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DerivedAttributes":
        return cls(
            k=d["k"], dct_index=d["dct_index"], seed=d["seed"],
            svd=Projection.from_json(json.dumps(d["svd"])),
            ica=Projection.from_json(json.dumps(d["ica"])),
        )

