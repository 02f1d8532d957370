"""Monte Carlo simulation of the mixture process and empirical estimates.

Random numbers come from a counter-based SplitMix64 hash: the uniform for
``(seed, replicate, draw)`` is a pure function of those three integers. Draw
0 picks the initial state, draw 1 the regime, and step ``k`` of a path uses
draws ``2 + 2k`` (holding time) and ``3 + 2k`` (next state). Any split of the
replicates across threads therefore reproduces the serial run bit for bit.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import MixtureModel
from .observation import ObservedPath

THREADS_ENV = "PHMIX_THREADS"
BLOCK_SIZE = 1 << 15

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    """No replicate satisfied the conditioning event."""


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, replicates, draw) -> np.ndarray:
    """Uniforms on ``[0, 1)`` for each replicate index at a given draw index."""
    reps = np.asarray(replicates, dtype=np.uint64)
    draws = np.asarray(draw, dtype=np.uint64)
    base = np.uint64(int(seed) & _MASK64)
    with np.errstate(over="ignore"):
        key = _mix64(base + (reps + np.uint64(1)) * _GOLDEN)
        z = _mix64(key + (draws + np.uint64(1)) * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def thread_count() -> int:
    """Worker threads from the ``PHMIX_THREADS`` environment variable (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def default_horizon(model: MixtureModel) -> float:
    """100 over the smallest positive total exit rate of either regime."""
    rates = np.concatenate([-np.diag(model.A), -np.diag(model.B)])
    rates = rates[rates > 0]
    if rates.size == 0:
        raise ValueError("model has no positive exit rate")
    return 100.0 / rates.min()


@dataclass(frozen=True)
class SimConfig:
    """Replicate count, seed, truncation horizon and optional conditioning.

    ``condition_time`` keeps only replicates not absorbed by that time; with
    ``condition_state`` they must sit in that transient state instead.
    """

    n: int
    seed: int
    t_max: float | None = None
    condition_time: float | None = None
    condition_state: int | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("replicate count must be a positive integer")
        if self.t_max is not None and not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.condition_time is not None and not (np.isfinite(self.condition_time) and self.condition_time >= 0):
            raise ValueError("condition_time must be finite and nonnegative")
        if self.condition_state is not None and self.condition_time is None:
            raise ValueError("condition_state needs a condition_time")


def _cumulative(p: np.ndarray) -> np.ndarray:
    """Row-wise cumulative probabilities whose last reachable entry is exactly 1."""
    p = np.atleast_2d(p)
    total = p.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.where(total > 0, np.cumsum(p, axis=-1) / np.where(total > 0, total, 1.0), 1.0)
    for row, prob in zip(cum, p):
        nz = np.flatnonzero(prob > 0)
        if nz.size:
            row[nz[-1] :] = 1.0
    return cum


def _pick(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the first cumulative entry exceeding ``u`` (rows aligned with ``u``)."""
    return (cum <= u[:, None]).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class _Tables:
    rates: np.ndarray  # (2, m+1) total exit rates per regime
    jumps: np.ndarray  # (2, m+1, m+1) cumulative jump probabilities
    start: np.ndarray  # (1, m) cumulative initial law
    switch: np.ndarray  # (m,)
    member: np.ndarray  # (n, m+1)
    m: int


def _tables(model: MixtureModel) -> _Tables:
    rates, jumps = [], []
    for gen in (model.gens.Q, model.gens.G):
        off = gen - np.diag(np.diag(gen))
        rates.append(off.sum(axis=1))
        jumps.append(_cumulative(off))
    return _Tables(
        np.array(rates), np.array(jumps), _cumulative(model.pi0), model.s0, model.exits.membership, model.m
    )


@dataclass(frozen=True, eq=False)
class SampledPath:
    """One simulated trajectory with its regime and exit times (``inf`` if not reached)."""

    regime: int
    epochs: np.ndarray
    states: np.ndarray
    exit_times: np.ndarray
    truncated: bool
    m: int

    @property
    def absorption_time(self) -> float:
        return float(self.epochs[-1]) if self.states[-1] == self.m else float("inf")

    def state_at(self, t: float) -> int:
        return int(self.states[np.searchsorted(self.epochs, t, side="right") - 1])

    def observed(self, t: float) -> ObservedPath:
        """The record of this path on ``[0, t]``."""
        keep = self.epochs <= t
        return ObservedPath(self.epochs[keep], self.states[keep], t, self.m)


def sample_path(model: MixtureModel, seed: int, replicate: int = 0, t_max: float | None = None) -> SampledPath:
    """Simulate replicate ``replicate`` of the stream ``seed``.

    Uses the same draws as the batch simulator, so it reproduces that
    replicate exactly. A state with zero exit rate parks the path until
    ``t_max``.
    """
    tab = _tables(model)
    t_max = default_horizon(model) if t_max is None else float(t_max)
    rep = np.array([replicate])
    state = int(_pick(tab.start, uniforms(seed, rep, 0))[0])
    regime = int(uniforms(seed, rep, 1)[0] < tab.switch[state])
    epochs, states = [0.0], [state]
    exit_times = np.where(tab.member[:, state], 0.0, np.inf)
    time, step, truncated = 0.0, 0, False
    while state != tab.m:
        rate = tab.rates[regime, state]
        ue = uniforms(seed, rep, 2 + 2 * step)
        uj = uniforms(seed, rep, 3 + 2 * step)
        nxt = time + (-np.log1p(-ue[0]) / rate if rate > 0 else np.inf)
        if nxt > t_max:
            truncated = True
            break
        state = int(_pick(tab.jumps[regime, state][None, :], uj)[0])
        time = float(nxt)
        epochs.append(time)
        states.append(state)
        exit_times = np.where(tab.member[:, state] & np.isinf(exit_times), time, exit_times)
        step += 1
    return SampledPath(regime, np.array(epochs), np.array(states), exit_times, truncated, tab.m)


def _simulate_block(tab: _Tables, seed: int, start: int, count: int, t_max: float, cond_time):
    reps = np.arange(start, start + count, dtype=np.uint64)
    state = _pick(np.broadcast_to(tab.start, (count, tab.start.shape[1])), uniforms(seed, reps, 0))
    regime = (uniforms(seed, reps, 1) < tab.switch[state]).astype(np.int64)
    initial = state.copy()
    n = tab.member.shape[0]
    exit_times = np.where(tab.member[:, state].T, 0.0, np.inf)
    time = np.zeros(count)
    truncated = np.zeros(count, dtype=bool)
    state_at = np.full(count, -1, dtype=np.int64)
    active = np.arange(count)
    step = 0
    while active.size:
        st, ph = state[active], regime[active]
        rate = tab.rates[ph, st]
        ue = uniforms(seed, reps[active], 2 + 2 * step)
        uj = uniforms(seed, reps[active], 3 + 2 * step)
        with np.errstate(divide="ignore"):
            hold = np.where(rate > 0, -np.log1p(-ue) / np.where(rate > 0, rate, 1.0), np.inf)
        nxt = time[active] + hold
        if cond_time is not None:
            here = (time[active] <= cond_time) & (cond_time < nxt)
            state_at[active[here]] = st[here]
        cut = nxt > t_max
        truncated[active[cut]] = True
        go = ~cut
        moved = active[go]
        new = _pick(tab.jumps[ph[go], st[go]], uj[go])
        when = nxt[go]
        time[moved] = when
        state[moved] = new
        fresh = tab.member[:, new].T & np.isinf(exit_times[moved])
        exit_times[moved] = np.where(fresh, when[:, None], exit_times[moved])
        done = new == tab.m
        if cond_time is not None:
            hit = done & (when <= cond_time)
            state_at[moved[hit]] = tab.m
        active = moved[~done]
        step += 1
    assert exit_times.shape == (count, n)
    return initial, regime, exit_times, truncated, state_at


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate with its standard error and effective sample size."""

    value: float | np.ndarray
    se: float | np.ndarray
    ess: int

    def z(self, reference):
        """Standardized discrepancy against an analytic reference value."""
        diff = np.asarray(self.value, dtype=float) - np.asarray(reference, dtype=float)
        se = np.asarray(self.se, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) <= 1e-12, 0.0, np.inf))
        return float(z) if z.ndim == 0 else z


def _proportion(hits: np.ndarray) -> Estimate:
    """Binomial proportion along the first axis of a boolean array."""
    ess = hits.shape[0]
    p = hits.mean(axis=0)
    if ess < 2:
        warnings.warn("fewer than two accepted replicates; standard error reported as inf", RuntimeWarning)
        se = np.full(np.shape(p), np.inf)
    else:
        se = np.sqrt(p * (1.0 - p) / ess)
    if np.ndim(p) == 0:
        return Estimate(float(p), float(se), ess)
    return Estimate(p, se, ess)


def _sample_mean(x: np.ndarray) -> Estimate:
    ess = x.shape[0]
    if ess < 2:
        warnings.warn("fewer than two accepted replicates; standard error reported as inf", RuntimeWarning)
        return Estimate(float(x.mean()), float("inf"), ess)
    return Estimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(ess)), ess)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    """Per-replicate summaries of a batch run."""

    config: SimConfig
    initial: np.ndarray
    regime: np.ndarray
    exit_times: np.ndarray
    truncated: np.ndarray
    state_at: np.ndarray
    m: int

    @property
    def truncation_count(self) -> int:
        return int(self.truncated.sum())

    @property
    def absorption_time(self) -> np.ndarray:
        return self.exit_times.max(axis=1)

    @property
    def condition_time(self) -> float:
        return 0.0 if self.config.condition_time is None else float(self.config.condition_time)

    @cached_property
    def accepted(self) -> np.ndarray:
        cfg = self.config
        if cfg.condition_time is None:
            keep = np.ones(self.initial.shape, dtype=bool)
        elif cfg.condition_state is None:
            keep = (self.state_at >= 0) & (self.state_at != self.m)
        else:
            keep = self.state_at == cfg.condition_state
        if not keep.any():
            raise SimulationError("no replicate satisfied the conditioning event")
        return keep

    @property
    def ess(self) -> int:
        return int(self.accepted.sum())

    def joint_survival(self, times) -> Estimate:
        """``P(tau_k > t_k for all k)`` for query times of shape ``(..., n)``."""
        times = np.asarray(times, dtype=float)
        tau = self.exit_times[self.accepted]
        flat = times.reshape(-1, tau.shape[1])
        hits = np.column_stack([np.all(tau > row, axis=1) for row in flat])
        est = _proportion(hits)
        shape = times.shape[:-1]
        if shape == ():
            return Estimate(float(est.value[0]), float(est.se[0]), est.ess)
        return Estimate(est.value.reshape(shape), est.se.reshape(shape), est.ess)

    def singular_mass(self, t1: float | None = None, tol_equal: float = 0.0) -> Estimate:
        """``P(tau_1 = tau_2 > t1)``; equality means within ``tol_equal``."""
        if self.exit_times.shape[1] != 2:
            raise ValueError("singular mass needs exactly two exit sets")
        t1 = self.condition_time if t1 is None else t1
        tau = self.exit_times[self.accepted]
        hits = (np.abs(tau[:, 0] - tau[:, 1]) <= tol_equal) & np.isfinite(tau[:, 0]) & (tau[:, 0] > t1)
        return _proportion(hits)

    def _first_exit(self):
        tau = self.exit_times[self.accepted]
        first = tau.min(axis=1)
        cause = tau.argmin(axis=1)
        ties = (tau == first[:, None]).sum(axis=1) > 1
        return first, cause, ties

    def competing_risks(self, s: float, cause: int, t: float | None = None) -> Estimate:
        """``P(t <= min_k tau_k < s, first exit is set cause)``, ties to the lowest index."""
        if not 0 <= cause < self.exit_times.shape[1]:
            raise IndexError(f"cause {cause} out of range")
        t = self.condition_time if t is None else t
        first, which, _ = self._first_exit()
        return _proportion((first >= t) & (first < s) & (which == cause))

    def tie_fraction(self, s: float, t: float | None = None) -> Estimate:
        """``P(t <= min_k tau_k < s)`` restricted to simultaneous entries."""
        t = self.condition_time if t is None else t
        first, _, ties = self._first_exit()
        return _proportion((first >= t) & (first < s) & ties)

    def mean(self, values: np.ndarray) -> Estimate:
        """Sample mean of a per-replicate statistic over accepted replicates."""
        return _sample_mean(np.asarray(values, dtype=float)[self.accepted])


def simulate(model: MixtureModel, config: SimConfig, threads: int | None = None) -> SimulationResult:
    """Run ``config.n`` replicates in fixed-size blocks, optionally across threads."""
    model.check(require_absorbing=False)
    tab = _tables(model)
    t_max = default_horizon(model) if config.t_max is None else float(config.t_max)
    threads = thread_count() if threads is None else int(threads)
    starts = range(0, config.n, BLOCK_SIZE)

    def run(start):
        return _simulate_block(tab, config.seed, start, min(BLOCK_SIZE, config.n - start), t_max, config.condition_time)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    initial, regime, exit_times, truncated, state_at = (np.concatenate(x) for x in zip(*parts))
    result = SimulationResult(config, initial, regime, exit_times, truncated, state_at, model.m)
    if result.truncation_count:
        warnings.warn(f"{result.truncation_count} replicates reached t_max={t_max:g} before absorption", RuntimeWarning)
    return result


def empirical_joint_survival(model, config: SimConfig, times) -> Estimate:
    return simulate(model, config).joint_survival(times)


def empirical_singular_mass(model, config: SimConfig, tol_equal: float = 0.0, t1: float | None = None) -> Estimate:
    return simulate(model, config).singular_mass(t1, tol_equal)


def empirical_competing_risks(model, config: SimConfig, t: float, s: float, cause: int) -> Estimate:
    return simulate(model, config).competing_risks(s, cause, t)
