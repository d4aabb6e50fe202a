"""Singular values via cyclic Jacobi iteration on the Gram matrix.

Only singular values are needed downstream, so the full decomposition is
never formed: for an M x P input the eigenvalues of the smaller of a^T a
and a a^T are computed and square-rooted. Iteration runs in float64
regardless of input dtype.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError

_MAX_SWEEPS = 30
_OFF_TOL = 1e-10


def singular_values(a, max_sweeps=_MAX_SWEEPS, tol=_OFF_TOL):
    """Return the singular values of a 2-D array, nonincreasing."""
    a = _as_matrix(a)
    return singular_values_batch(a[None, :, :], max_sweeps=max_sweeps, tol=tol)[0]


def singular_values_batch(a, max_sweeps=_MAX_SWEEPS, tol=_OFF_TOL):
    """Singular values for a stack of matrices (B, M, P) -> (B, min(M, P)).

    All matrices share one rotation schedule; converged ones see identity
    rotations. Raises NumericsError if any matrix still has an off-diagonal
    entry >= tol after `max_sweeps` sweeps.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise NumericsError(f"expected a stack of matrices, got shape {a.shape}")
    _, m, p = a.shape
    if m >= p:
        g = np.swapaxes(a, -1, -2) @ a
    else:
        g = a @ np.swapaxes(a, -1, -2)
    eig = _jacobi_eigenvalues(g, max_sweeps, tol)
    eig = np.maximum(eig, 0.0)
    sv = np.sqrt(eig)
    sv.sort(axis=-1)
    return sv[:, ::-1]


def _jacobi_eigenvalues(g, max_sweeps, tol):
    # g: (B, C, C) symmetric, destroyed in place.
    g = np.ascontiguousarray(g)
    b, c, _ = g.shape
    if c == 1:
        return g[:, :, 0].copy()
    idx = np.arange(b)
    for _ in range(max_sweeps):
        if _max_offdiag(g) < tol:
            break
        for p in range(c - 1):
            for q in range(p + 1, c):
                apq = g[:, p, q]
                app = g[:, p, p]
                aqq = g[:, q, q]
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    theta = (aqq - app) / (2.0 * apq)
                    t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                skip = apq == 0.0
                t = np.where(skip, 0.0, t)
                cs = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * cs
                gp = g[:, p, :].copy()
                gq = g[:, q, :].copy()
                g[:, p, :] = cs[:, None] * gp - sn[:, None] * gq
                g[:, q, :] = sn[:, None] * gp + cs[:, None] * gq
                gp = g[:, :, p].copy()
                gq = g[:, :, q].copy()
                g[:, :, p] = cs[:, None] * gp - sn[:, None] * gq
                g[:, :, q] = sn[:, None] * gp + cs[:, None] * gq
                # the rotation annihilates (p, q) analytically; pin it so
                # roundoff does not stall convergence
                rot = ~skip
                g[idx[rot], p, q] = 0.0
                g[idx[rot], q, p] = 0.0
    else:
        resid = _max_offdiag(g)
        raise NumericsError(
            f"Jacobi iteration left off-diagonal residual {resid:.3e} "
            f"after {max_sweeps} sweeps",
            residual=resid,
        )
    return np.einsum("bii->bi", g).copy()


def _max_offdiag(g):
    c = g.shape[-1]
    mask = ~np.eye(c, dtype=bool)
    return np.abs(g[:, mask]).max() if c > 1 else 0.0


def _as_matrix(a):
    data = getattr(a, "data", a)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise NumericsError(f"expected a matrix, got shape {arr.shape}")
    return arr
