"""Conditional exit-time distributions of the mixture process.

Every quantity is conditioned on a :class:`~phmix.observation.BeliefState`
at time ``t = belief.t`` and on one of two events:

* :class:`AtState` ``(i)``: the process sits in transient state ``i`` at ``t``.
* :class:`NoExit`: the process has not been absorbed by ``t``; this is the
  ``pi(t)``-weighted average of the :class:`AtState` values.

Both reduce to row weights ``w_B = pi * s`` and ``w_A = pi * (1 - s)`` that
multiply the regime-wise matrix expressions, so a value is always
``w_B @ F(B) @ 1 + w_A @ F(A) @ 1`` for a regime functional ``F``.

Time arguments accept scalars or arrays. Laplace transforms and moments are
reported for the residual times ``u = tau - t`` unless ``residual=False``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial
from typing import Union

import numpy as np

from .matrix_core import commutator, expm, expm_times, solve
from .model import MixtureModel, exit_rates
from .observation import BeliefState

SINGULAR_TOL = 1e-12

BRANCH_FIRST = 1  # t1 > t2
BRANCH_SECOND = 2  # t2 > t1
BRANCH_SINGULAR = 0  # t1 == t2
BRANCH_NAMES = {BRANCH_FIRST: "component1", BRANCH_SECOND: "component2", BRANCH_SINGULAR: "singular"}


class UndefinedBeliefError(ValueError):
    """The belief gives no switching probability for a state that carries mass."""


@dataclass(frozen=True)
class AtState:
    state: int


@dataclass(frozen=True)
class NoExit:
    pass


Conditioning = Union[AtState, NoExit]
NO_EXIT = NoExit()


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Query times against a conditioning time, with their ascending order.

    ``times`` has shape ``(..., n)``. ``order`` is the stable sort
    permutation along the last axis, so ties go to the lower exit index.
    """

    t: float
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim == 0:
            times = times[None]
        if not np.all(np.isfinite(times)) or not np.isfinite(self.t):
            raise ValueError("grid times must be finite")
        if np.any(times < self.t):
            raise ValueError(f"query times must be >= the conditioning time {self.t!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return self.times.shape[-1]

    @property
    def order(self) -> np.ndarray:
        return np.argsort(self.times, axis=-1, kind="stable")

    def increments(self) -> np.ndarray:
        """Gaps between consecutive ordered times, starting from ``t``."""
        ordered = np.take_along_axis(self.times, self.order, axis=-1)
        start = np.full(ordered.shape[:-1] + (1,), self.t)
        return np.diff(np.concatenate([start, ordered], axis=-1), axis=-1)


@dataclass(frozen=True)
class JointEvaluation:
    """A bivariate density value with the branch that produced it."""

    value: Union[float, np.ndarray]
    branch: Union[int, np.ndarray]

    @property
    def branch_name(self):
        if np.ndim(self.branch) == 0:
            return BRANCH_NAMES[int(self.branch)]
        return np.vectorize(BRANCH_NAMES.get)(self.branch)


# ---------------------------------------------------------------------------
# Shared plumbing


def regime_weights(model: MixtureModel, belief: BeliefState, conditioning: Conditioning):
    """Return ``[(w_B, B), (w_A, A)]`` for the conditioning event."""
    m = model.m
    if belief.s.shape != (m,):
        raise ValueError(f"belief has {belief.s.size} states, model has {m}")
    if isinstance(conditioning, AtState):
        i = conditioning.state
        if not 0 <= i < m:
            raise ValueError(f"state {i} is not transient; conditioning requires a transient state")
        if np.isnan(belief.s[i]):
            raise UndefinedBeliefError(f"switching belief is undefined at state {i}")
        base = np.zeros(m)
        base[i] = 1.0
    elif isinstance(conditioning, NoExit):
        base = belief.pi
        if np.any(np.isnan(belief.s) & (base > 0)):
            raise UndefinedBeliefError("switching belief is undefined at a state with positive mass")
    else:
        raise TypeError(f"unknown conditioning {conditioning!r}")
    s = np.where(base > 0, np.nan_to_num(belief.s), 0.0)
    return [(base * s, model.B), (base * (1.0 - s), model.A)]


def _residual(belief: BeliefState, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("time arguments must be finite")
    u = s - belief.t
    if np.any(u < 0):
        raise ValueError(f"query time precedes the conditioning time {belief.t!r}")
    return u


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def _ones(m):
    return np.ones(m)


# ---------------------------------------------------------------------------
# Univariate quantities and the transition matrix


def transition_matrix(model: MixtureModel, belief: BeliefState, s) -> np.ndarray:
    """Transition matrix from ``belief.t`` to ``s`` on the full state space.

    Rows of transient states where the switching belief is undefined are NaN.
    The absorbing row is ``(0, ..., 0, 1)``.
    """
    u = float(_residual(belief, s))
    m = model.m
    sw = np.append(belief.s, 0.0)[:, None]
    EG = expm(model.gens.G, u)
    EQ = expm(model.gens.Q, u)
    defined = ~np.isnan(sw[:, 0])
    out = np.full((m + 1, m + 1), np.nan)
    out[defined] = sw[defined] * EG[defined] + (1.0 - sw[defined]) * EQ[defined]
    out[m] = 0.0
    out[m, m] = 1.0
    return out


def survival_uni(model, belief, conditioning, s):
    """``P(tau > s)``, where ``tau`` is the absorption time."""
    u = _residual(belief, s)
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        total = total + np.einsum("i,...ij,j->...", w, expm_times(M, u), _ones(model.m))
    return _scalar(total)


def density_uni(model, belief, conditioning, s):
    """Density of the absorption time at ``s``."""
    u = _residual(belief, s)
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        total = total + np.einsum("i,...ij,j->...", w, expm_times(M, u), exit_rates(M))
    return _scalar(total)


def laplace_uni(model, belief, conditioning, lam, residual: bool = True) -> float:
    """Laplace transform ``E[exp(-lam * u)]`` of the residual time ``u = tau - t``.

    With ``residual=False`` the transform of ``tau`` itself is returned,
    which carries the extra factor ``exp(-lam * t)``.
    """
    lam = float(lam)
    if lam < 0:
        raise ValueError("Laplace argument must be nonnegative")
    eye = np.eye(model.m)
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        total += w @ solve(lam * eye - M, exit_rates(M))
    return float(total) if residual else float(np.exp(-lam * belief.t) * total)


def _residual_moment(model, belief, conditioning, n: int) -> float:
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        x = _ones(model.m)
        for _ in range(n):
            x = solve(M, x)
        total += w @ x
    return (-1) ** n * factorial(n) * total


def moment_uni(model, belief, conditioning, n: int, residual: bool = True) -> float:
    """``n``-th moment of the residual time ``u = tau - t``, or of ``tau`` if not ``residual``."""
    if int(n) != n or n < 0:
        raise ValueError("moment order must be a nonnegative integer")
    n = int(n)
    if residual or belief.t == 0:
        return _residual_moment(model, belief, conditioning, n)
    t = belief.t
    return sum(comb(n, k) * t ** (n - k) * _residual_moment(model, belief, conditioning, k) for k in range(n + 1))


# ---------------------------------------------------------------------------
# Multivariate survival and densities


def _exit_count(model: MixtureModel, n: int):
    if n != model.n:
        raise ValueError(f"got {n} query times for a model with {model.n} exit sets")


def survival_joint(model, belief, conditioning, times):
    """``P(tau_1 > t_1, ..., tau_n > t_n)`` for query times of shape ``(..., n)``."""
    grid = times if isinstance(times, TimeGrid) else TimeGrid(belief.t, times)
    _exit_count(model, grid.n)
    order = grid.order.reshape(-1, grid.n)
    gaps = grid.increments().reshape(-1, grid.n)
    hdiag = model.exits.outside_mask.astype(float)
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        v = np.broadcast_to(w, (order.shape[0], model.m))
        for k in range(grid.n):
            v = np.einsum("pi,pij->pj", v, expm_times(M, gaps[:, k])) * hdiag[order[:, k]]
        total = total + v.sum(axis=-1)
    return _scalar(np.reshape(total, grid.times.shape[:-1]))


def density_joint_multi(model, belief, conditioning, times):
    """Absolutely continuous joint density at query times with distinct entries.

    Tied coordinates fall on the singular set, which has no density here.
    """
    grid = times if isinstance(times, TimeGrid) else TimeGrid(belief.t, times)
    n = grid.n
    _exit_count(model, n)
    ordered = np.sort(grid.times, axis=-1)
    if np.any(np.diff(ordered, axis=-1) == 0):
        raise ValueError("tied query times lie on the singular set; the density is not defined there")
    order = grid.order.reshape(-1, n)
    gaps = grid.increments().reshape(-1, n)
    h = model.h
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        comm = np.stack([commutator(M, h[k]) for k in range(n)])
        last = np.stack([M @ h[k] @ _ones(model.m) for k in range(n)])
        v = np.broadcast_to(w, (order.shape[0], model.m))
        for k in range(n - 1):
            v = np.einsum("pi,pij->pj", v, expm_times(M, gaps[:, k]))
            v = np.einsum("pi,pij->pj", v, comm[order[:, k]])
        v = np.einsum("pi,pij->pj", v, expm_times(M, gaps[:, n - 1]))
        total = total + np.einsum("pj,pj->p", v, last[order[:, n - 1]])
    return _scalar((-1) ** n * np.reshape(total, grid.times.shape[:-1]))


def _require_two(model: MixtureModel):
    if model.n != 2:
        raise ValueError(f"bivariate quantity requested for a model with {model.n} exit sets")


def both_outside(model: MixtureModel) -> np.ndarray:
    """Diagonal indicator of the states outside both exit sets."""
    _require_two(model)
    return model.h[0] @ model.h[1]


def density_joint_bi(model, belief, conditioning, t1, t2) -> JointEvaluation:
    """Bivariate density with branch tag.

    ``t1 > t2`` and ``t2 > t1`` give the absolutely continuous parts; exact
    equality gives the singular part, a density along the diagonal with
    respect to its length.
    """
    _require_two(model)
    t1, t2 = np.broadcast_arrays(np.asarray(t1, dtype=float), np.asarray(t2, dtype=float))
    u1 = _residual(belief, t1).ravel()
    u2 = _residual(belief, t2).ravel()
    H1, H2 = model.h
    H12 = H1 @ H2
    ones = _ones(model.m)
    first, second, diag = u1 > u2, u2 > u1, u1 == u2
    value = np.zeros(u1.shape)
    for w, M in regime_weights(model, belief, conditioning):
        C1, C2 = commutator(M, H1), commutator(M, H2)
        if first.any():
            v = w @ expm_times(M, u2[first]) @ C2
            v = np.einsum("pi,pij->pj", v, expm_times(M, u1[first] - u2[first]))
            value[first] += v @ (M @ H1 @ ones)
        if second.any():
            v = w @ expm_times(M, u1[second]) @ C1
            v = np.einsum("pi,pij->pj", v, expm_times(M, u2[second] - u1[second]))
            value[second] += v @ (M @ H2 @ ones)
        if diag.any():
            value[diag] += w @ expm_times(M, u1[diag]) @ (H12 @ exit_rates(M))
    branch = np.select([first, second], [BRANCH_FIRST, BRANCH_SECOND], BRANCH_SINGULAR)
    shape = t1.shape
    if shape == ():
        return JointEvaluation(float(value[0]), int(branch[0]))
    return JointEvaluation(value.reshape(shape), branch.reshape(shape))


def singular_cdf_bi(model, belief, conditioning, t1):
    """Mass of the event ``{tau_1 = tau_2 > t1}``."""
    _require_two(model)
    u = _residual(belief, t1)
    H12 = both_outside(model)
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        x = -solve(M, H12 @ exit_rates(M))
        total = total + np.einsum("i,...ij,j->...", w, expm_times(M, u), x)
    return _scalar(total)


def is_singular_free(model: MixtureModel) -> bool:
    """True when no state outside both exit sets can jump straight to absorption.

    Only such jumps end both exit times at once, so this is exactly the
    condition for the joint law to have no mass on the diagonal.
    """
    H12 = both_outside(model)
    return all(np.max(np.abs(H12 @ exit_rates(M))) <= SINGULAR_TOL for M in (model.A, model.B))


def laplace_joint_bi(model, belief, conditioning, lam1, lam2, residual: bool = True) -> float:
    """Joint transform ``E[exp(-lam1 u1 - lam2 u2); tau_1 > t, tau_2 > t]`` with ``u_k = tau_k - t``.

    Includes the diagonal mass. For conditioning where both exits have not yet
    happened the value at ``(0, 0)`` is 1; otherwise it is the probability
    that neither exit has happened. ``residual=False`` multiplies by
    ``exp(-(lam1 + lam2) t)``, the transform in the original time variables.
    """
    _require_two(model)
    lam1, lam2 = float(lam1), float(lam2)
    if lam1 < 0 or lam2 < 0:
        raise ValueError("Laplace arguments must be nonnegative")
    H1, H2 = model.h
    H12 = H1 @ H2
    eye = np.eye(model.m)
    ones = _ones(model.m)
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        C1, C2 = commutator(M, H1), commutator(M, H2)
        inner = (
            C2 @ solve(lam1 * eye - M, M @ H1 @ ones)
            + C1 @ solve(lam2 * eye - M, M @ H2 @ ones)
            + H12 @ exit_rates(M)
        )
        total += w @ solve((lam1 + lam2) * eye - M, inner)
    return float(total) if residual else float(np.exp(-(lam1 + lam2) * belief.t) * total)


def cross_moment_bi(model, belief, conditioning, residual: bool = True) -> float:
    """``E[u1 u2; tau_1 > t, tau_2 > t]`` with ``u_k = tau_k - t``.

    ``residual=False`` gives ``E[tau_1 tau_2; tau_1 > t, tau_2 > t]``.
    """
    _require_two(model)
    H1, H2 = model.h
    H12 = H1 @ H2
    ones = _ones(model.m)
    cross = first = second = mass = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        C1, C2 = commutator(M, H1), commutator(M, H2)
        x1, x2 = solve(M, H1 @ ones), solve(M, H2 @ ones)
        a = C2 @ H1 @ ones + C1 @ H2 @ ones - H12 @ exit_rates(M)
        b = 2.0 * solve(M, a) + C1 @ x2 + C2 @ x1
        cross += w @ solve(M, solve(M, b))
        first -= w @ (H2 @ x1)
        second -= w @ (H1 @ x2)
        mass += w @ (H12 @ ones)
    if residual:
        return float(cross)
    t = belief.t
    return float(cross + t * (first + second) + t * t * mass)


def _block_conformant(model: MixtureModel) -> bool:
    """Check the three-block layout: no flows between the two single-exit groups."""
    out = model.exits.outside_mask
    both = out[0] & out[1]
    only_second_in = out[0] & ~out[1]  # exited set 2 only
    only_first_in = ~out[0] & out[1]  # exited set 1 only
    groups = [both, only_first_in, only_second_in]
    if not np.any(both):
        return False
    for M in (model.A, model.B):
        for src, dst in ((1, 0), (2, 0), (1, 2), (2, 1)):
            if np.any(M[np.ix_(groups[src], groups[dst])] != 0):
                return False
    return True


def marginal_exit(model, belief, conditioning, k: int, s):
    """``P(tau_k > s, neither exit before t)`` from a reduced generator.

    The chain is restricted to the states outside exit set ``k`` and started
    from the part of the belief outside both sets, which makes the value
    equal to the joint survival with the other query time at ``t``.
    :class:`AtState` conditioning requires a state outside both sets.
    """
    _require_two(model)
    if not 0 <= k < 2:
        raise IndexError("exit set index must be 0 or 1")
    if not _block_conformant(model):
        raise ValueError("model is not block-conformant for the reduced-generator marginal")
    both = model.exits.survivors
    if isinstance(conditioning, AtState) and conditioning.state not in both:
        raise ValueError("marginal_exit needs a conditioning state outside both exit sets")
    u = _residual(belief, s)
    idx = model.exits.complement(k)
    keep = np.isin(idx, both)
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        sub = M[np.ix_(idx, idx)]
        start = np.where(keep, w[idx], 0.0)
        total = total + np.einsum("i,...ij,j->...", start, expm_times(sub, u), np.ones(idx.size))
    return _scalar(total)


# ---------------------------------------------------------------------------
# First exit and its cause


def _first_exit_rates(model: MixtureModel, M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rates out of the survivor block, grouped by the cause of the first exit.

    The cause of entering a state is the lowest-index exit set containing it;
    entering several sets at once also counts into the tie column.
    """
    surv = model.exits.survivors
    mem = model.exits.membership
    full = np.concatenate([M, exit_rates(M)[:, None]], axis=1)[surv]
    rates = np.zeros((surv.size, model.n))
    tie = np.zeros(surv.size)
    for j in range(model.m + 1):
        sets = np.flatnonzero(mem[:, j])
        if sets.size == 0:
            continue
        rates[:, sets[0]] += full[:, j]
        if sets.size > 1:
            tie += full[:, j]
    return surv, rates, tie


def _first_exit_mass(model, belief, conditioning, s, column):
    u = np.inf if np.isinf(s) else float(_residual(belief, s))
    total = 0.0
    for w, M in regime_weights(model, belief, conditioning):
        surv, rates, tie = _first_exit_rates(model, M)
        if surv.size == 0:
            continue
        r = tie if column is None else rates[:, column]
        sub = M[np.ix_(surv, surv)]
        x = solve(sub, r)
        if np.isinf(u):
            total -= w[surv] @ x
        else:
            total += w[surv] @ (expm(sub, u) @ x - x)
    return float(total)


def competing_risk(model, belief, conditioning, s, cause: int) -> float:
    """``P(t <= min_k tau_k < s, first exit is set cause)``; ``s`` may be ``inf``.

    Simultaneous entries count toward the lowest-index set among them.
    """
    if not 0 <= cause < model.n:
        raise IndexError(f"cause {cause} out of range for {model.n} exit sets")
    return _first_exit_mass(model, belief, conditioning, s, cause)


def tie_probability(model, belief, conditioning, s) -> float:
    """``P(t <= min_k tau_k < s)`` restricted to several sets being entered at once."""
    return _first_exit_mass(model, belief, conditioning, s, None)
