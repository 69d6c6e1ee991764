"""Dense real-matrix helpers: products, a small-matrix SVD and singular-value gradients.

Matrices are plain 2-D ``float64`` numpy arrays. Prompts are wide (rows <= cols),
so the SVD diagonalizes the small Gram matrix P P^T and then polishes the rows of
U^T P with one-sided Jacobi rotations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, DomainError, OrientationError, RangeError, ShapeError

# singular values below this fraction of sigma_1 are reported as exact zeros
ZERO_RATIO = 1e-12
# relative gap (w.r.t. sigma_1) below which a singular value counts as repeated
GAP_RATIO = 1e-6
_MAX_SWEEPS = 80


def as_matrix(a, name="matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} contains non-finite entries")
    return m


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD of an n x d matrix with n <= d.

    ``u`` is n x n, ``sigma`` has length n (non-increasing), ``v`` is d x n.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    # accumulate over the inner index in order: same rounding as a naive triple loop,
    # independent of the BLAS build (inner dims here are ranks, i.e. tiny)
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k])
    return out


def _complete_basis(v: np.ndarray, filled: np.ndarray) -> None:
    """Fill columns of ``v`` not flagged in ``filled`` with an orthonormal complement, in place."""
    kept = v[:, filled]
    k, m = kept.shape[1], int((~filled).sum())
    # Householder Q is orthonormal even if some unit vector lies in span(kept)
    q, _ = np.linalg.qr(np.hstack([kept, np.eye(v.shape[0], m)]))
    v[:, ~filled] = q[:, k:]


def _rotate_rows(w, u, eps):
    """Sweep pairwise rotations until all rows of ``w`` are orthogonal; ``u`` absorbs the inverse."""
    for _ in range(_MAX_SWEEPS):
        g = w @ w.T
        norms = np.sqrt(np.diag(g))
        pairs = np.argwhere(np.abs(np.triu(g, 1)) > eps * np.outer(norms, norms))
        if not len(pairs):
            return
        for i, j in pairs:
            alpha = w[i] @ w[i]
            beta = w[j] @ w[j]
            gamma = w[i] @ w[j]
            if gamma == 0.0 or abs(gamma) <= eps * np.sqrt(alpha * beta):
                continue
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.hypot(1.0, t)
            s = c * t
            wi, wj = w[i].copy(), w[j]
            w[i] = c * wi - s * wj
            w[j] = s * wi + c * wj
            ui, uj = u[:, i].copy(), u[:, j]
            u[:, i] = c * ui - s * uj
            u[:, j] = s * ui + c * uj


def svd_thin(p) -> SvdResult:
    """Thin SVD: Gram-matrix eigenvectors, refined by one-sided (Hestenes) Jacobi rotations on rows.

    Rotations act from the left, so ``p = U @ W`` holds throughout and the rows of
    ``W`` become mutually orthogonal; their norms are the singular values. Output
    is deterministic: each u_i is flipped so its first entry above 1e-12 in
    magnitude is positive.
    """
    p = as_matrix(p, "p")
    n, d = p.shape
    if n > d:
        raise OrientationError(f"svd_thin needs rows <= cols, got {p.shape}; transpose first")

    # work at unit scale so squared norms neither overflow nor go subnormal
    scale = float(np.abs(p).max())
    w = p / scale if scale > 0 else p.copy()
    # the Gram eigenvectors bring W = U^T P close to row-orthogonal; the one-sided
    # sweeps then finish the job at full accuracy, including exact rank deficiency
    _, u = np.linalg.eigh(w @ w.T)
    u = np.ascontiguousarray(u[:, ::-1])
    w = u.T @ w
    # rows at round-off level belong to the null space
    row_norms = np.sqrt(np.einsum("ij,ij->i", w, w))
    w[row_norms <= 0.01 * ZERO_RATIO * row_norms.max()] = 0.0
    eps = n * np.finfo(np.float64).eps
    with np.errstate(over="ignore"):
        _rotate_rows(w, u, eps)

    sigma = np.sqrt(np.einsum("ij,ij->i", w, w))
    order = np.argsort(-sigma, kind="stable")
    sigma, w, u = sigma[order], w[order], u[:, order]

    v = np.zeros((d, n))
    nonzero = sigma > ZERO_RATIO * sigma[0] if sigma[0] > 0 else np.zeros(n, dtype=bool)
    v[:, nonzero] = (w[nonzero] / sigma[nonzero, None]).T
    sigma = np.where(nonzero, sigma * max(scale, 0.0), 0.0)
    if not nonzero.all():
        _complete_basis(v, nonzero)

    big = np.abs(u) > 1e-12
    lead = u[np.argmax(big, axis=0), np.arange(n)]
    flip = big.any(axis=0) & (lead < 0)
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return SvdResult(_frozen(u), _frozen(sigma), _frozen(v))


def check_simple(sigma: np.ndarray, i: int) -> None:
    """Raise DegeneracyError unless the 0-based singular value ``i`` is simple and nonzero."""
    scale = sigma[0]
    if scale <= 0:
        raise DegeneracyError("zero matrix has no differentiable singular values", gap=0.0)
    gaps = []
    if i > 0:
        gaps.append(sigma[i - 1] - sigma[i])
    if i < len(sigma) - 1:
        gaps.append(sigma[i] - sigma[i + 1])
    gap = min(gaps) / scale if gaps else np.inf
    if gap < GAP_RATIO:
        raise DegeneracyError(
            f"sigma_{i + 1} is not separated from its neighbours (relative gap {gap:.3e})",
            gap=gap,
        )
    if sigma[i] <= ZERO_RATIO * scale:
        raise DegeneracyError(f"sigma_{i + 1} is zero; |sigma| is not differentiable there", gap=0.0)


def singular_value_gradient(p, i: int, svd: SvdResult | None = None) -> np.ndarray:
    """Gradient of sigma_i with respect to ``p``: the rank-one matrix u_i v_i^T.

    ``i`` is 1-based, so ``i=1`` is the largest singular value.
    """
    p = as_matrix(p, "p")
    if svd is None:
        svd = svd_thin(p)
    n = p.shape[0]
    if not 1 <= i <= n:
        raise RangeError(f"singular value index {i} outside 1..{n}")
    check_simple(svd.sigma, i - 1)
    return np.outer(svd.u[:, i - 1], svd.v[:, i - 1])


def numerical_rank(p, tol_ratio: float = 1e-10) -> int:
    """Number of singular values above ``tol_ratio * sigma_1``. Tall inputs are transposed."""
    if not 0.0 < tol_ratio < 1.0:
        raise RangeError(f"tol_ratio must lie in (0, 1), got {tol_ratio}")
    p = as_matrix(p, "p")
    if p.shape[0] > p.shape[1]:
        p = p.T
    sigma = svd_thin(p).sigma
    if sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > tol_ratio * sigma[0]))
