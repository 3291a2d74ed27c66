"""Principal-component decorrelation of the 52-channel readings.

The covariance matrix is only 52x52, so the model is an eigendecomposition
of the sample covariance (N-1 normalization). All components are kept in
the model; truncation happens at transform time via choose_rank. Channels
that are identically zero in the data produce zero eigenvalues, so a
near-1 variance threshold drops them automatically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# eigenvalues below this fraction of the largest count as numerically zero
NULL_EIGENVALUE_REL = 1e-12


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray         # (d,)
    components: np.ndarray   # (d, d), rows are components
    eigenvalues: np.ndarray  # (d,), nonincreasing, clipped at 0
    whiten: bool = False

    @property
    def n_features(self) -> int:
        return self.mean.size

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        if total <= 0.0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / total


def fit(readings: np.ndarray, whiten: bool = False) -> PCAModel:
    """Eigendecomposition of the sample covariance of the rows.

    Component signs are fixed so each row's largest-magnitude entry is
    positive, making the model deterministic.
    """
    x = np.asarray(readings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2D array with at least 2 rows")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    for row in comps:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PCAModel(mean, np.ascontiguousarray(comps), evals, whiten)


def choose_rank(model: PCAModel, threshold: float) -> int:
    """Smallest k whose cumulative explained variance reaches threshold.

    Eigenvalues below NULL_EIGENVALUE_REL of the largest are treated as
    exactly zero, so a threshold of 1 - 1e-12 never retains null
    directions (dead channels).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    evals = model.eigenvalues.copy()
    if evals[0] > 0.0:
        evals[evals < NULL_EIGENVALUE_REL * evals[0]] = 0.0
    total = evals.sum()
    if total <= 0.0:
        return 1
    cum = np.cumsum(evals) / total
    return int(np.searchsorted(cum, threshold - 1e-15) + 1)


def _check_k(model: PCAModel, k: int):
    if not 1 <= k <= model.n_features:
        raise ValueError(f"k must be in [1, {model.n_features}], got {k}")


def transform(model: PCAModel, k: int, readings: np.ndarray) -> np.ndarray:
    """Project mean-centered readings onto the first k components."""
    _check_k(model, k)
    x = np.atleast_2d(np.asarray(readings, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise ValueError(f"readings must have width {model.n_features}")
    z = (x - model.mean) @ model.components[:k].T
    if model.whiten:
        scale = np.sqrt(np.clip(model.eigenvalues[:k], NULL_EIGENVALUE_REL, None))
        z = z / scale
    return z


def inverse_transform(model: PCAModel, k: int, coords: np.ndarray) -> np.ndarray:
    """Map k-dimensional component coordinates back to channel space."""
    _check_k(model, k)
    z = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if z.shape[1] != k:
        raise ValueError(f"coords must have width {k}")
    if model.whiten:
        scale = np.sqrt(np.clip(model.eigenvalues[:k], NULL_EIGENVALUE_REL, None))
        z = z * scale
    return z @ model.components[:k] + model.mean
