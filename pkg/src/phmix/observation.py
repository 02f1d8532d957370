"""Observed paths, their likelihoods and Bayesian updates of the beliefs.

Three information regimes are supported at an observation time ``t``:

* :class:`FullPath`: the whole trajectory on ``[0, t]`` is known.
* :class:`NoInfo`: only survival (no absorption by ``t``) is known.
* :class:`NoInfoKnownStart`: survival plus the initial state.

The update returns the posterior switching probability for each current
state and the posterior law of the current state given survival.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Union

import numpy as np

from .matrix_core import expm
from .model import MixtureModel, StateSpace


class PathError(ValueError):
    """An observed path breaks a structural rule (ordering, labels, absorption)."""


class PathFormatError(PathError):
    """A path file cannot be parsed; ``line`` points at the offending row."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message + (f" (line {line})" if line is not None else ""))
        self.line = line


class ObservationError(ValueError):
    """The observation has zero probability under the model."""


@dataclass(frozen=True, eq=False)
class ObservedPath:
    """Piecewise-constant trajectory: ``states[k]`` holds on ``[epochs[k], epochs[k+1])``.

    The last state holds until ``horizon``. States are indices into the full
    state space, with ``m`` the absorbing state.
    """

    epochs: np.ndarray
    states: np.ndarray
    horizon: float
    m: int

    def __post_init__(self):
        epochs = np.array(self.epochs, dtype=float).reshape(-1)
        states = np.array(self.states, dtype=int).reshape(-1)
        horizon = float(self.horizon)
        if epochs.size == 0 or epochs.size != states.size:
            raise PathError("a path needs matching, nonempty lists of epochs and states")
        if not np.all(np.isfinite(epochs)) or not np.isfinite(horizon):
            raise PathError("epochs and horizon must be finite")
        if epochs[0] != 0.0:
            raise PathError(f"the first epoch must be 0, got {epochs[0]!r}")
        if np.any(np.diff(epochs) <= 0):
            raise PathError("epochs must be strictly increasing")
        if epochs[-1] > horizon:
            raise PathError(f"horizon {horizon!r} precedes the last jump at {epochs[-1]!r}")
        if np.any((states < 0) | (states > self.m)):
            raise PathError("state index out of range")
        if np.any(states[1:] == states[:-1]):
            raise PathError("consecutive states must differ")
        if states[0] == self.m:
            raise PathError("a path cannot start in the absorbing state")
        hit = np.flatnonzero(states == self.m)
        if hit.size and hit[0] != states.size - 1:
            raise PathError("no transitions are possible after absorption")
        epochs.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "horizon", horizon)

    @classmethod
    def from_labels(cls, space: StateSpace, epochs, labels, horizon) -> "ObservedPath":
        return cls(epochs, [space.index(x) for x in labels], horizon, space.m)

    @property
    def initial(self) -> int:
        return int(self.states[0])

    @property
    def terminal(self) -> int:
        return int(self.states[-1])


@dataclass(frozen=True, eq=False)
class PathStats:
    """Sufficient statistics of a path: occupation times and transition counts."""

    occupancy: np.ndarray
    counts: np.ndarray
    initial: int
    terminal: int


def path_stats(path: ObservedPath) -> PathStats:
    size = path.m + 1
    ends = np.append(path.epochs[1:], path.horizon)
    occupancy = np.zeros(size)
    np.add.at(occupancy, path.states, ends - path.epochs)
    counts = np.zeros((size, size), dtype=int)
    np.add.at(counts, (path.states[:-1], path.states[1:]), 1)
    return PathStats(occupancy, counts, path.initial, path.terminal)


def path_log_likelihood(stats: PathStats, generator) -> float:
    """Log-likelihood of a path under a full ``(m+1) x (m+1)`` generator.

    Returns ``-inf`` when the path uses a transition of rate zero.
    """
    gen = np.asarray(generator, dtype=float)
    size = stats.occupancy.size
    if gen.shape != (size, size):
        raise ValueError(f"generator must be {size}x{size}, got {gen.shape}")
    leave = -np.diag(gen)
    total = -float(leave @ stats.occupancy)
    used = stats.counts > 0
    rates = gen[used]
    if np.any(rates <= 0):
        return -np.inf
    return total + float(stats.counts[used] @ np.log(rates))


def path_likelihood(stats: PathStats, generator) -> float:
    """Likelihood of a path; exactly ``0.0`` for an impossible transition."""
    return float(np.exp(path_log_likelihood(stats, generator)))


# ---------------------------------------------------------------------------
# Information regimes and beliefs


@dataclass(frozen=True)
class FullPath:
    path: ObservedPath


@dataclass(frozen=True)
class NoInfo:
    t: float


@dataclass(frozen=True)
class NoInfoKnownStart:
    t: float
    start: int


Information = Union[FullPath, NoInfo, NoInfoKnownStart]


def info_time(info: Information) -> float:
    return info.path.horizon if isinstance(info, FullPath) else float(info.t)


@dataclass(frozen=True, eq=False)
class BeliefState:
    """Beliefs at time ``t`` over the transient states.

    ``s[j]`` is the posterior switching probability given the current state
    is ``j`` (NaN where that event has probability zero under the
    information). ``pi[j]`` is the posterior law of the current state given
    survival. ``regime`` names the information regime that produced it.
    """

    t: float
    s: np.ndarray
    pi: np.ndarray
    regime: str = "manual"

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        pi = np.array(self.pi, dtype=float)
        if s.ndim != 1 or pi.shape != s.shape:
            raise ValueError("s and pi must be vectors of equal length")
        if not np.isfinite(self.t) or self.t < 0:
            raise ValueError("belief time must be finite and nonnegative")
        defined = ~np.isnan(s)
        if np.any((s[defined] < 0) | (s[defined] > 1)):
            raise ValueError("switching probabilities must lie in [0, 1]")
        if np.any(~np.isfinite(pi)) or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("pi must be a probability vector")
        s.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def prior(cls, model: MixtureModel) -> "BeliefState":
        return cls(0.0, model.s0, model.pi0, "prior")

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.s)


def _posterior(prior: float, log_switched: float, log_base: float) -> float:
    """``prior L1 / (prior L1 + (1 - prior) L0)`` from log-likelihoods; NaN if 0/0."""
    if log_switched == log_base and np.isfinite(log_base):
        return float(prior)
    with np.errstate(divide="ignore"):
        a = np.log(prior) + log_switched
        b = np.log1p(-prior) + log_base
    if a == -np.inf and b == -np.inf:
        return float("nan")
    return float(np.exp(a - np.logaddexp(a, b)))


def _mixture_rows(model: MixtureModel, info: Information) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Initial row vector and the regime exponentials for the survival regimes."""
    t = float(info.t)
    if not np.isfinite(t) or t < 0:
        raise ValueError("observation time must be finite and nonnegative")
    if isinstance(info, NoInfoKnownStart):
        if not 0 <= info.start < model.m:
            raise ValueError(f"known start {info.start} is not a transient state")
        row = np.zeros(model.m)
        row[info.start] = 1.0
    else:
        row = model.pi0
    return row, expm(model.B, t), expm(model.A, t)


def switching_update(model: MixtureModel, info: Information) -> np.ndarray:
    """Posterior switching probabilities ``s_j(t)`` for the transient states ``j``.

    Entries are NaN where the conditioning event ``{X_t = j}`` has zero
    probability under the information.
    """
    m = model.m
    if isinstance(info, FullPath):
        path = info.path
        if path.m != m:
            raise ValueError("path was built for a different state space")
        stats = path_stats(path)
        out = np.full(m, np.nan)
        if path.terminal < m:
            lg = path_log_likelihood(stats, model.gens.G)
            lq = path_log_likelihood(stats, model.gens.Q)
            out[path.terminal] = _posterior(model.s0[path.initial], lg, lq)
        return out

    if info.t == 0:
        if isinstance(info, NoInfoKnownStart):
            _mixture_rows(model, info)
            out = np.full(m, np.nan)
            out[info.start] = model.s0[info.start]
            return out
        return model.s0.copy()

    row, EB, EA = _mixture_rows(model, info)
    # expm can leave entries of order -eps where a state is unreachable
    switched = np.maximum((row * model.s0) @ EB, 0.0)
    base = np.maximum((row * (1.0 - model.s0)) @ EA, 0.0)
    den = switched + base
    out = np.full(m, np.nan)
    pos = den > 0
    out[pos] = switched[pos] / den[pos]
    return out


def state_update(model: MixtureModel, info: Information) -> np.ndarray:
    """Posterior law ``pi(t)`` of the current transient state given survival.

    Raises :class:`ObservationError` if survival has zero probability, for
    instance when a full path has already been absorbed.
    """
    m = model.m
    if isinstance(info, FullPath):
        if info.path.terminal == m:
            raise ObservationError("the observed path is absorbed; no transient state law exists")
        out = np.zeros(m)
        out[info.path.terminal] = 1.0
        return out

    if info.t == 0:
        _mixture_rows(model, info)
        if isinstance(info, NoInfoKnownStart):
            out = np.zeros(m)
            out[info.start] = 1.0
            return out
        return model.pi0.copy()

    row, EB, EA = _mixture_rows(model, info)
    mass = np.maximum((row * model.s0) @ EB + (row * (1.0 - model.s0)) @ EA, 0.0)
    total = mass.sum()
    if not total > 0:
        raise ObservationError(f"survival to t={info.t!r} has zero probability")
    return mass / total


def update(model: MixtureModel, info: Information) -> BeliefState:
    """Combined belief state at the observation time."""
    regime = {FullPath: "full-path", NoInfo: "no-info", NoInfoKnownStart: "no-info-known-start"}[type(info)]
    s = switching_update(model, info)
    pi = state_update(model, info)
    return BeliefState(info_time(info), s, pi, regime)


# ---------------------------------------------------------------------------
# Path files


def _number(value: str, what: str, line: int) -> float:
    try:
        x = float(value)
    except ValueError:
        raise PathFormatError(f"{what} {value!r} is not a number", line) from None
    if not np.isfinite(x):
        raise PathFormatError(f"{what} {value!r} is not finite", line)
    return x


def parse_path_csv(text: str, space: StateSpace) -> ObservedPath:
    """Parse ``time,state`` rows ending in a ``horizon,<t>`` row.

    The first data row must be at time 0. Labels must belong to ``space``.
    """
    reader = csv.reader(io.StringIO(text))
    rows = [(i + 1, [c.strip() for c in r]) for i, r in enumerate(reader) if any(c.strip() for c in r)]
    if not rows:
        raise PathFormatError("empty path file")
    line, header = rows[0]
    if header != ["time", "state"]:
        raise PathFormatError("header must be 'time,state'", line)
    epochs: list[float] = []
    labels: list[str] = []
    horizon = None
    for line, row in rows[1:]:
        if len(row) != 2:
            raise PathFormatError(f"expected 2 fields, got {len(row)}", line)
        if horizon is not None:
            raise PathFormatError("rows after the horizon row", line)
        if row[0] == "horizon":
            horizon = _number(row[1], "horizon", line)
            continue
        epochs.append(_number(row[0], "time", line))
        labels.append(row[1])
    if horizon is None:
        raise PathFormatError("missing final 'horizon,<t>' row")
    if not epochs:
        raise PathFormatError("no state rows before the horizon")
    for label in labels:
        if label not in space.labels:
            raise PathError(f"unknown state label {label!r}")
    return ObservedPath.from_labels(space, epochs, labels, horizon)


def read_path_csv(path, space: StateSpace) -> ObservedPath:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_path_csv(fh.read(), space)


def format_path_csv(path: ObservedPath, space: StateSpace) -> str:
    lines = ["time,state"]
    lines += [f"{float(e)!r},{space.labels[s]}" for e, s in zip(path.epochs, path.states)]
    lines.append(f"horizon,{path.horizon!r}")
    return "\n".join(lines) + "\n"
