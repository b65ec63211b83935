"""Dense SVD and similarity measures used by the importance criteria.

The SVD is a one-sided Jacobi iteration: simple, unconditionally convergent
at the matrix sizes this engine sees (N <= 257), and deterministic down to
the sign convention, which keeps importance tables byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError
from .tensor_ops import F32

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60

ZERO_NORM_GUARD = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Full decomposition a = u @ diag(s) @ v.T with orthonormal columns."""

    u: np.ndarray  # (N, N), columns are left singular vectors
    s: np.ndarray  # (N,), non-increasing, non-negative
    v: np.ndarray  # (N, N), columns are right singular vectors


@lru_cache(maxsize=None)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # Tournament schedule: every column pair exactly once per sweep, rounds
    # consist of disjoint pairs so all rotations in a round commute.
    m = n if n % 2 == 0 else n + 1
    items = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = items[i], items[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        if ps:
            rounds.append((np.asarray(ps, dtype=np.intp), np.asarray(qs, dtype=np.intp)))
        items = [items[0]] + [items[-1]] + items[1:-1]
    return tuple(rounds)


def svd(a: np.ndarray) -> SvdResult:
    """One-sided Jacobi SVD of a square matrix.

    Sweeps until every off-diagonal rotation is below 1e-12 (normalized) or
    60 sweeps. Signs are fixed so the largest-magnitude entry of each left
    singular vector is positive.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"svd needs a square matrix, got {a.shape}")
    n = a.shape[0]
    work = a.astype(np.float64).copy()
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        off_max = 0.0
        for ps, qs in _round_robin(n):
            ap = work[:, ps]
            aq = work[:, qs]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            denom = np.sqrt(alpha * beta)
            off = np.where(denom > 0.0, np.abs(gamma) / np.where(denom > 0.0, denom, 1.0), 0.0)
            if off.size:
                off_max = max(off_max, float(off.max()))
            rot = off > JACOBI_TOL
            if not rot.any():
                continue
            zeta = (beta[rot] - alpha[rot]) / (2.0 * gamma[rot])
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(zeta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            rp = ps[rot]
            rq = qs[rot]
            ap = work[:, rp].copy()
            aq = work[:, rq].copy()
            work[:, rp] = c * ap - s * aq
            work[:, rq] = s * ap + c * aq
            vp = v[:, rp].copy()
            vq = v[:, rq].copy()
            v[:, rp] = c * vp - s * vq
            v[:, rq] = s * vp + c * vq
        if off_max < JACOBI_TOL:
            break
    sig = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    work = work[:, order]
    v = v[:, order]
    u = np.zeros((n, n))
    nz = sig > 0.0
    u[:, nz] = work[:, nz] / sig[nz]
    _orthonormalize(u)
    for j in range(n):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u=u.astype(F32), s=sig.astype(F32), v=v.astype(F32))


def _orthonormalize(u: np.ndarray) -> None:
    # Columns with vanishing singular values carry no direction of their own;
    # complete them deterministically so U stays orthonormal.
    n = u.shape[0]
    for j in range(n):
        col = u[:, j].copy()
        if j:
            col -= u[:, :j] @ (u[:, :j].T @ col)
        nrm = np.linalg.norm(col)
        if nrm > 0.5:
            u[:, j] = col / nrm
            continue
        for k in range(n):
            cand = np.zeros(n)
            cand[k] = 1.0
            if j:
                cand -= u[:, :j] @ (u[:, :j].T @ cand)
            nrm = np.linalg.norm(cand)
            if nrm > 0.5:
                u[:, j] = cand / nrm
                break


def cosine_flat(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity between flattened matrices (Frobenius inner product).

    Returns 0.0 when either operand has Frobenius norm below 1e-12: a dead
    filter contributes nothing and must rank last.
    """
    if a.shape != b.shape:
        raise DimensionError(f"cosine_flat shapes disagree: {a.shape} vs {b.shape}")
    fa = a.astype(np.float64).ravel()
    fb = b.astype(np.float64).ravel()
    na = np.linalg.norm(fa)
    nb = np.linalg.norm(fb)
    if na < ZERO_NORM_GUARD or nb < ZERO_NORM_GUARD:
        return 0.0
    return float(np.clip(np.dot(fa, fb) / (na * nb), -1.0, 1.0))


def rank1(sigma: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Outer product u v^T scaled by a non-negative sigma."""
    if u.ndim != 1 or v.ndim != 1:
        raise DimensionError(f"rank1 needs vectors, got {u.shape} and {v.shape}")
    if sigma < 0.0:
        raise ValueError(f"rank1 sigma must be non-negative, got {sigma}")
    return (float(sigma) * np.outer(u.astype(np.float64), v.astype(np.float64))).astype(F32)
