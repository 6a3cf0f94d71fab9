"""Dense small-matrix numerics.

The SVD is a one-sided (Hestenes) Jacobi method. Column pairs are visited in
round-robin tournament order, so every pair in a round is disjoint and the
rotations of one round are applied at once with numpy. The same code path
handles a stack of matrices ``(..., m, n)``, which is how the batch-wise
nuclear-norm penalty evaluates thousands of tiny SVDs per training step.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "SvdConvergenceError",
    "SvdResult",
    "as_matrix",
    "svd",
    "nuclear_norm",
    "spectral_norm",
    "frobenius_norm",
    "stable_rank",
    "numeric_rank",
    "nuclear_norm_subgradient",
    "MAX_SWEEPS",
    "JACOBI_TOL",
    "EPS_RANK",
]

MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
EPS_RANK = 1e-10

# Columns whose norm falls below this fraction of the largest one carry no
# reliable direction; their left vectors are rebuilt by orthogonal completion.
_NULL_COLUMN = 1e-14


class SvdConvergenceError(RuntimeError):
    """Jacobi sweeps hit the iteration cap before the columns decoupled."""


class SvdResult(NamedTuple):
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray


def as_matrix(m) -> np.ndarray:
    """Validate and convert to a float64 array of shape ``(..., rows, cols)``."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim < 2:
        raise ValueError(f"expected a matrix, got array of shape {a.shape}")
    if a.shape[-2] < 1 or a.shape[-1] < 1:
        raise ValueError(f"matrix must have at least one row and column, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of ``range(n)`` in which each round is a perfect matching."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the columns of every matrix in the stack ``a`` (m >= n).

    Returns the rotated columns ``a @ v`` and the accumulated rotations ``v``.
    """
    n = a.shape[-1]
    # work on transposed copies so each column is a contiguous row
    at = np.swapaxes(a, -1, -2).copy(order="C")
    vt = np.broadcast_to(np.eye(n), a.shape[:-2] + (n, n)).copy()
    if n == 1:
        return np.swapaxes(at, -1, -2), vt
    schedule = _round_robin(n)
    # columns with squared norm below this are rounding residue of a rank
    # deficiency; rotating them only shuffles noise and never settles
    negligible = (n * np.finfo(np.float64).eps) ** 2 * (at * at).sum(axis=(-2, -1))[..., None]
    for _ in range(max_sweeps):
        rotated = False
        for p, q in schedule:
            ap, aq = at[..., p, :], at[..., q, :]
            alpha = (ap * ap).sum(axis=-1)
            beta = (aq * aq).sum(axis=-1)
            gamma = (ap * aq).sum(axis=-1)
            active = (np.abs(gamma) > tol * np.sqrt(alpha) * np.sqrt(beta)) & (np.minimum(alpha, beta) > negligible)
            if not active.any():
                continue
            rotated = True
            safe = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * safe)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)[..., None]
            s = np.where(active, c[..., 0] * t, 0.0)[..., None]
            at[..., p, :], at[..., q, :] = c * ap - s * aq, s * ap + c * aq
            vp, vq = vt[..., p, :], vt[..., q, :]
            vt[..., p, :], vt[..., q, :] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            return np.swapaxes(at, -1, -2), np.swapaxes(vt, -1, -2)
    raise SvdConvergenceError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")


def _complete_columns(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged ``good`` by an orthonormal completion."""
    m, k = u.shape
    basis = u[:, good]
    q, _ = np.linalg.qr(np.hstack([basis, np.eye(m)]))
    out = u.copy()
    out[:, ~good] = q[:, basis.shape[1] : basis.shape[1] + int((~good).sum())]
    return out


def svd(m, *, tol: float = JACOBI_TOL, max_sweeps: int = MAX_SWEEPS) -> SvdResult:
    """Thin SVD ``m = u @ diag(sigma) @ vt`` with ``sigma`` non-increasing.

    Accepts a single matrix or a stack ``(..., rows, cols)``; ``k = min(rows, cols)``.
    Signs live in ``u`` so ``sigma`` is always non-negative.
    """
    a = as_matrix(m)
    if a.shape[-2] < a.shape[-1]:
        r = svd(np.swapaxes(a, -1, -2), tol=tol, max_sweeps=max_sweeps)
        return SvdResult(np.swapaxes(r.vt, -1, -2), r.sigma, np.swapaxes(r.u, -1, -2))

    # unit max-entry scaling keeps squared column norms clear of under/overflow
    scale = np.max(np.abs(a), axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    av, v = _jacobi(a / scale, tol, max_sweeps)
    sigma = np.sqrt(np.einsum("...ij,...ij->...j", av, av))
    order = np.argsort(-sigma, axis=-1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=-1)
    av = np.take_along_axis(av, order[..., None, :], axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)

    frob = np.sqrt((sigma * sigma).sum(axis=-1, keepdims=True))
    good = sigma > np.maximum(_NULL_COLUMN, 4 * a.shape[-1] * np.finfo(np.float64).eps) * frob
    u = av / np.where(good, sigma, 1.0)[..., None, :]
    if not good.all():
        flat_u = u.reshape((-1,) + u.shape[-2:])
        flat_good = good.reshape((-1, good.shape[-1]))
        for i in np.flatnonzero(~flat_good.all(axis=-1)):
            flat_u[i] = _complete_columns(flat_u[i], flat_good[i])
        u = flat_u.reshape(u.shape)
    return SvdResult(u, sigma * scale[..., 0], np.swapaxes(v, -1, -2))


def nuclear_norm(m):
    """Sum of singular values."""
    return svd(m).sigma.sum(axis=-1)


def spectral_norm(m):
    return svd(m).sigma[..., 0]


def frobenius_norm(m):
    a = as_matrix(m)
    return np.sqrt(np.einsum("...ij,...ij->...", a, a))


def stable_rank(m):
    """``||m||_F^2 / ||m||_2^2``; raises for the zero matrix, where it is undefined."""
    sigma = svd(m).sigma
    top = sigma[..., 0]
    if np.any(top == 0):
        raise ValueError("stable rank of the zero matrix is undefined")
    return (sigma**2).sum(axis=-1) / top**2


def numeric_rank(m, eps: float = EPS_RANK):
    sigma = svd(m).sigma
    return (sigma > eps * sigma[..., :1]).sum(axis=-1)


def nuclear_norm_subgradient(m, eps: float = EPS_RANK) -> np.ndarray:
    """``U_r V_r^T`` over singular values above ``eps * sigma_max``.

    This is the gradient of the nuclear norm wherever singular values are
    distinct and positive, and the minimal-norm subgradient elsewhere.
    """
    u, sigma, vt = svd(m)
    keep = (sigma > eps * sigma[..., :1]).astype(np.float64)
    return np.einsum("...ik,...k,...kj->...ij", u, keep, vt)
