"""Information density, its gradient, rank correlation and the harmonic-mean score."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DomainError, RangeError, ShapeError, UndefinedMetricError
from .linalg import SvdResult, as_matrix, check_simple, svd_thin


def information_density(sigma: Sequence[float], k: int) -> float:
    """Share of the singular-value mass held by the ``k`` largest values.

    ``sigma`` must be non-increasing and non-negative (as returned by svd_thin).
    """
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ShapeError("sigma must be a non-empty 1-D sequence")
    if not 1 <= k <= s.size:
        raise RangeError(f"k={k} outside 1..{s.size}")
    if np.any(s < 0):
        raise DomainError("singular values must be non-negative")
    total = s.sum()
    if total <= 0:
        raise UndefinedMetricError("information density of an all-zero spectrum is undefined")
    if k == s.size:
        return 1.0
    # partial and total sums round differently; keep the ratio inside (0, 1]
    return float(min(1.0, s[:k].sum() / total))


def id_of_matrix(p, k: int) -> float:
    return information_density(svd_thin(as_matrix(p)).sigma, k)


def id_weights(sigma: np.ndarray, k: int) -> np.ndarray:
    """d IDk / d sigma_j for every j."""
    s_n = sigma.sum()
    s_k = sigma[:k].sum()
    head = (np.arange(sigma.size) < k).astype(np.float64)
    return (head * s_n - s_k) / s_n**2


def id_gradient(p, k: int, svd: SvdResult | None = None) -> np.ndarray:
    """Gradient of IDk with respect to the matrix ``p``.

    Every singular value must be simple, since each one enters the ratio.
    """
    p = as_matrix(p, "p")
    n = p.shape[0]
    if not 1 <= k <= n:
        raise RangeError(f"k={k} outside 1..{n}")
    if svd is None:
        svd = svd_thin(p)
    if k == n:
        return np.zeros_like(p)
    for i in range(n):
        check_simple(svd.sigma, i)
    w = id_weights(svd.sigma, k)
    return (svd.u * w) @ svd.v.T


def average_ranks(xs: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing the mean of the positions they span."""
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sorted_x = x[order]
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman's rho as the Pearson correlation of average ranks (valid under ties)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ShapeError(f"spearman needs equal-length 1-D inputs, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ShapeError("spearman needs at least two points")
    rx = average_ranks(x) - (x.size + 1) / 2.0
    ry = average_ranks(y) - (y.size + 1) / 2.0
    sxx = rx @ rx
    syy = ry @ ry
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("rank correlation is undefined for a constant sequence")
    rho = (rx @ ry) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, rho)))


def harmonic_mean(base_acc: float, new_acc: float) -> float:
    """Harmonic mean of two accuracies given in percent."""
    if not (0 < base_acc <= 100 and 0 < new_acc <= 100):
        raise DomainError(f"accuracies must lie in (0, 100], got {base_acc}, {new_acc}")
    return 2.0 * base_acc * new_acc / (base_acc + new_acc)
