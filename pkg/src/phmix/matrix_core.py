"""Dense matrix primitives: exponentials, guarded solves and commutators.

Every function accepts either a single square matrix or a stack of them with
shape ``(..., m, m)``. Stacked evaluation is what keeps grid and quadrature
evaluation of the distribution formulas affordable.
"""

from __future__ import annotations

import numpy as np

RCOND_TOL = 1e-12

# Degree-13 Padé coefficients and the matching scaling threshold (Higham 2005).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a solve is requested against a numerically singular matrix."""


def _check_square(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _pade13(X: np.ndarray) -> np.ndarray:
    b = _PADE13
    eye = np.broadcast_to(np.eye(X.shape[-1]), X.shape)
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X4 @ X2
    inner_u = b[13] * X6 + b[11] * X4 + b[9] * X2
    U = X @ (X6 @ inner_u + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * eye)
    inner_v = b[12] * X6 + b[10] * X4 + b[8] * X2
    V = X6 @ inner_v + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * eye
    return np.linalg.solve(V - U, V + U)


def expm(M, t=1.0) -> np.ndarray:
    """Return ``exp(M * t)``.

    ``t`` broadcasts against the leading dimensions of ``M``, so a single
    ``(m, m)`` matrix with a vector of times yields a stack of exponentials.
    Entries with ``t == 0`` come back as the exact identity.

    Uses scaling and squaring around a fixed degree-13 Padé approximant; the
    scaling exponent is picked per matrix so a stack with mixed norms keeps
    full accuracy.
    """
    M = _check_square(M)
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("time argument has non-finite entries")
    m = M.shape[-1]
    X = M * t[..., None, None]
    batch_shape = X.shape[:-2]
    flat = X.reshape((-1, m, m))
    out = np.empty_like(flat)

    norms = np.abs(flat).sum(axis=-2).max(axis=-1)
    zero = norms == 0.0
    out[zero] = np.eye(m)
    with np.errstate(divide="ignore"):
        scale = np.where(zero, 0, np.maximum(0, np.ceil(np.log2(norms / _THETA13))))
    scale = scale.astype(int)
    for s in np.unique(scale[~zero]):
        idx = np.flatnonzero((scale == s) & ~zero)
        R = _pade13(flat[idx] / 2.0**s)
        for _ in range(s):
            R = R @ R
        out[idx] = R
    return out.reshape(batch_shape + (m, m))


def expm_times(M, times) -> np.ndarray:
    """Exponentials ``exp(M * t)`` for an array of times, deduplicating repeats.

    Returns shape ``times.shape + (m, m)``. Grids tend to revisit the same
    increments many times, so only the distinct values are exponentiated.
    """
    times = np.asarray(times, dtype=float)
    uniq, inverse = np.unique(times.ravel(), return_inverse=True)
    E = expm(M, uniq)
    return E[inverse].reshape(times.shape + E.shape[-2:])


def rcond(M) -> np.ndarray:
    """Reciprocal 2-norm condition number ``sigma_min / sigma_max``."""
    M = _check_square(M)
    sv = np.linalg.svd(M, compute_uv=False)
    top = sv[..., 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(top > 0, sv[..., -1] / np.where(top > 0, top, 1.0), 0.0)
    return r


def solve(M, rhs) -> np.ndarray:
    """Solve ``M X = rhs``, refusing numerically singular ``M``.

    ``rhs`` may be a vector (one per matrix in a stack) or a matrix. Raises
    :class:`SingularMatrixError` when the reciprocal condition number falls
    below ``RCOND_TOL``.
    """
    M = _check_square(M)
    rhs = np.asarray(rhs, dtype=float)
    r = rcond(M)
    if np.any(r < RCOND_TOL):
        raise SingularMatrixError(
            f"matrix is singular to working precision (rcond {float(np.min(r)):.3g} < {RCOND_TOL:g})"
        )
    if rhs.ndim == M.ndim - 1:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    return np.linalg.solve(M, rhs)


def commutator(M, N) -> np.ndarray:
    """Return ``M N - N M``."""
    M = _check_square(M, "first operand")
    N = _check_square(N, "second operand")
    if M.shape[-1] != N.shape[-1]:
        raise ValueError(f"dimension mismatch: {M.shape} vs {N.shape}")
    return M @ N - N @ M
