"""Low-rank prompt parameterization with a frozen full-rank branch and dropout.

The effective prompt fed to an encoder is ``p_init + Dropout(p_a @ p_b)``. Only the
two factors train; ``p_init`` is kept read-only so no update can reach it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeError
from .linalg import as_matrix, matmul

DEFAULT_GAUSSIAN_SIGMA = 1e-2
DEFAULT_DROPOUT = 0.1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def matrix_hash(m: np.ndarray) -> str:
    """sha256 of the little-endian float64 row-major bytes, prefixed by the shape."""
    m = np.ascontiguousarray(m, dtype="<f8")
    h = hashlib.sha256(f"{m.shape[0]}x{m.shape[1]}:".encode())
    h.update(m.tobytes())
    return h.hexdigest()


@dataclass
class DipPrompt:
    p_init: np.ndarray
    p_a: np.ndarray
    p_b: np.ndarray
    dropout_p: float = DEFAULT_DROPOUT

    def __post_init__(self):
        self.p_init = _readonly(as_matrix(self.p_init, "p_init"))
        self.p_a = as_matrix(self.p_a, "p_a").copy()
        self.p_b = as_matrix(self.p_b, "p_b").copy()
        n, d = self.p_init.shape
        r = self.p_a.shape[1]
        if self.p_a.shape[0] != n or self.p_b.shape != (r, d):
            raise ShapeError(
                f"factor shapes {self.p_a.shape} x {self.p_b.shape} do not compose to {self.p_init.shape}"
            )
        if not 1 <= r < min(n, d):
            raise RangeError(f"rank must satisfy 1 <= r < min(n, d) = {min(n, d)}, got {r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise RangeError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    @property
    def n(self) -> int:
        return self.p_init.shape[0]

    @property
    def d(self) -> int:
        return self.p_init.shape[1]

    @property
    def r(self) -> int:
        return self.p_a.shape[1]

    @property
    def num_trainable(self) -> int:
        return self.p_a.size + self.p_b.size

    def params(self) -> list[np.ndarray]:
        return [self.p_a, self.p_b]


@dataclass
class FullRankPrompt:
    """Classic prompt: every entry of the n x d matrix is trainable."""

    p: np.ndarray

    def __post_init__(self):
        self.p = as_matrix(self.p, "p").copy()

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def d(self) -> int:
        return self.p.shape[1]

    @property
    def num_trainable(self) -> int:
        return self.p.size

    def params(self) -> list[np.ndarray]:
        return [self.p]


def init_dip(n, d, r, dropout_p=DEFAULT_DROPOUT, p_init=None,
             gaussian_sigma=DEFAULT_GAUSSIAN_SIGMA, seed=0) -> DipPrompt:
    """Draw both factors i.i.d. from N(0, gaussian_sigma^2); ``p_init`` defaults to zeros."""
    if not 1 <= r < min(n, d):
        raise RangeError(f"rank must satisfy 1 <= r < min(n, d) = {min(n, d)}, got {r}")
    if gaussian_sigma <= 0:
        raise RangeError(f"gaussian_sigma must be positive, got {gaussian_sigma}")
    if p_init is None:
        p_init = np.zeros((n, d))
    p_init = as_matrix(p_init, "p_init")
    if p_init.shape != (n, d):
        raise ShapeError(f"p_init has shape {p_init.shape}, expected {(n, d)}")
    rng = np.random.default_rng(seed)
    p_a = rng.normal(0.0, gaussian_sigma, size=(n, r))
    p_b = rng.normal(0.0, gaussian_sigma, size=(r, d))
    return DipPrompt(p_init, p_a, p_b, dropout_p)


def dropout_scale(shape, dropout_p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability p, else 1/(1-p)."""
    if dropout_p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= dropout_p
    return keep / (1.0 - dropout_p)


def effective_prompt(prompt, mode="infer", rng=None, scale=None) -> np.ndarray:
    """The matrix the encoder consumes.

    In ``"train"`` mode one dropout mask is drawn over the n x d low-rank product
    (or ``scale`` is used if given). Full-rank prompts are returned as-is.
    """
    if isinstance(prompt, FullRankPrompt):
        return prompt.p.copy()
    low_rank = matmul(prompt.p_a, prompt.p_b)
    if mode == "infer":
        return prompt.p_init + low_rank
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if scale is None:
        if rng is None:
            raise ValueError("train mode needs an rng for the dropout mask")
        scale = dropout_scale(low_rank.shape, prompt.dropout_p, rng)
    return prompt.p_init + scale * low_rank


def merge(prompt) -> np.ndarray:
    """Fold the factors into one matrix for inference."""
    return effective_prompt(prompt, "infer")


def factor_grads(prompt, grad_p: np.ndarray, scale=None) -> list[np.ndarray]:
    """Pull a gradient w.r.t. the effective prompt back onto the trainable parameters."""
    if isinstance(prompt, FullRankPrompt):
        return [grad_p]
    g = grad_p if scale is None else grad_p * scale
    return [g @ prompt.p_b.T, prompt.p_a.T @ g]


def param_count_dip(n: int, d: int, r: int) -> int:
    if n < 1 or d < 1 or r < 0:
        raise RangeError(f"invalid dims n={n}, d={d}, r={r}")
    return r * (n + d)


def param_count_full(n: int, d: int) -> int:
    if n < 1 or d < 1:
        raise RangeError(f"invalid dims n={n}, d={d}")
    return n * d


def param_count_dip_maple(n=4, d_text=512, d_vis=768, r=1, r_proj=64, layers=9) -> int:
    """Low-rank text prompt plus a rank-``r_proj`` factored text-to-image projection, per layer."""
    per_layer = param_count_dip(n, d_text, r) + r_proj * (d_text + d_vis)
    return per_layer * layers
