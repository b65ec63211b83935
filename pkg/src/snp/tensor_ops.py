"""Dense float32 kernels for the forward pass and scoring.

All tensors are row-major numpy float32 arrays. Reductions accumulate in
float64 and round to float32 on store, which keeps the prune-vs-mask
equivalence tolerances tight and platform-stable.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from scipy.special import erf

from .errors import DimensionError, InvalidPlanError

F32 = np.float32

LN_EPS = 1e-6


def as_f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=F32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation, rounded to float32."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(F32)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """x @ w.T + bias; w is (out, in). Accumulates in float64 like matmul."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear shapes disagree: x {x.shape}, w {w.shape}")
    y = x.astype(np.float64) @ w.astype(np.float64).T
    if b is not None:
        y += b.astype(np.float64)
    return y.astype(F32)


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows needs a 2-D input, got {a.shape}")
    z = a.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(F32)


def layer_norm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    active: Sequence[int] | None = None,
) -> np.ndarray:
    """Layer normalization over a subset of channels.

    Mean and variance are computed over the `active` channels only; channels
    outside the set output exactly 0. `active=None` means all channels. The
    restricted form exists so mask-simulated models reproduce pruned-model
    layer statistics exactly.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"layer_norm shapes disagree: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    d = x.shape[1]
    if active is None:
        idx = None
        xa = x.astype(np.float64)
    else:
        idx = np.asarray(active, dtype=np.intp)
        if idx.size == 0:
            raise InvalidPlanError("layer_norm active set is empty")
        if idx.size > d or idx.min() < 0 or idx.max() >= d:
            raise InvalidPlanError(f"layer_norm active set out of range for width {d}")
        xa = x[:, idx].astype(np.float64)
    mean = xa.mean(axis=1, keepdims=True)
    var = np.square(xa - mean).mean(axis=1, keepdims=True)
    ya = (xa - mean) / np.sqrt(var + LN_EPS)
    if idx is None:
        y = ya * gamma.astype(np.float64) + beta.astype(np.float64)
        return y.astype(F32)
    out = np.zeros_like(x, dtype=F32)
    out[:, idx] = (
        ya * gamma[idx].astype(np.float64) + beta[idx].astype(np.float64)
    ).astype(F32)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU via the Gauss error function (not the tanh approximation)."""
    z = x.astype(np.float64)
    return (0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))).astype(F32)
