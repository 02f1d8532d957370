"""Numerical cross-checks of the bivariate law by direct integration of its density.

These never use the closed forms for transforms, masses or moments; they
integrate the densities returned by :func:`density_joint_bi` over a truncated
domain, so agreement is evidence that the closed forms are right.
"""

from __future__ import annotations

import numpy as np

from .distributions import density_joint_bi, survival_uni
from .quadrature import integrate, integrate_2d

TAIL_TOL = 1e-10


def truncation_horizon(model, belief, conditioning) -> float:
    """Residual horizon past which the remaining absorption mass is below ``TAIL_TOL``.

    Starts at 50 over the smallest positive exit rate and doubles until the
    survival probability at the horizon is small enough.
    """
    rates = np.concatenate([-np.diag(model.A), -np.diag(model.B)])
    rates = rates[rates > 0]
    if rates.size == 0:
        raise ValueError("model has no positive exit rate")
    horizon = 50.0 / rates.min()
    for _ in range(60):
        if survival_uni(model, belief, conditioning, belief.t + horizon) < TAIL_TOL:
            return horizon
        horizon *= 2.0
    raise ValueError("absorption mass does not decay; is a sub-generator singular?")


def bivariate_integral(model, belief, conditioning, weight=None, tol: float = 1e-10) -> dict:
    """Integrate ``weight(u1, u2)`` against the joint law of the residual exit times.

    Returns the contributions of the two absolutely continuous parts, the
    diagonal part and their total. ``weight=None`` integrates 1.
    """
    t = belief.t
    top = truncation_horizon(model, belief, conditioning)
    if weight is None:

        def weight(a, b):
            return np.ones(np.broadcast(a, b).shape)

    def first(u, v):  # t1 = t + u + v > t2 = t + u
        u, v = np.broadcast_arrays(u, v)
        f = density_joint_bi(model, belief, conditioning, t + u + v, t + u).value
        return f * weight(u + v, u)

    def second(u, v):  # t2 = t + u + v > t1 = t + u
        u, v = np.broadcast_arrays(u, v)
        f = density_joint_bi(model, belief, conditioning, t + u, t + u + v).value
        return f * weight(u, u + v)

    def diagonal(u):
        f = density_joint_bi(model, belief, conditioning, t + u, t + u).value
        return f * weight(u, u)

    c1 = float(integrate_2d(first, top, top, tol).value)
    c2 = float(integrate_2d(second, top, top, tol).value)
    c0 = float(integrate(diagonal, 0.0, top, tol).value)
    return {"component1": c1, "component2": c2, "singular": c0, "total": c1 + c2 + c0}
