"""Model definition: state space, regime generators, exit sets and validation.

A model mixes two absorbing continuous-time Markov chains that share the
transient states ``0..m-1`` and the absorbing state ``m``. The *slow* regime
(``phi = 0``) runs on the sub-generator ``A``; the *switched* regime
(``phi = 1``) runs on ``B``. The regime is drawn once at time zero with
``P(phi = 1 | X_0 = i) = s[i]``.

Exit sets are closed subsets of the full state space that all contain the
absorbing state and meet only there. The exit time for a set is the first
entry time into it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .matrix_core import RCOND_TOL, rcond

ROW_SUM_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a model cannot be built or fails validation."""

    def __init__(self, message: str, violations: Sequence[str] = ()):
        super().__init__(message)
        self.violations = list(violations)


class ModelFormatError(ModelError):
    """Raised when a model file cannot be parsed into a model."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class StateSpace:
    """Ordered state labels; the last label is the absorbing state."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ModelError("state space needs at least one transient state plus the absorbing state")
        if len(set(labels)) != len(labels):
            raise ModelError("state labels must be unique")

    @property
    def m(self) -> int:
        """Number of transient states."""
        return len(self.labels) - 1

    @property
    def absorbing(self) -> int:
        return self.m

    def index(self, label: str) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ModelError(f"unknown state label {label!r}") from None

    @classmethod
    def numbered(cls, m: int) -> "StateSpace":
        return cls(tuple(str(i + 1) for i in range(m)) + ("D",))


def exit_rates(sub: np.ndarray) -> np.ndarray:
    """Rates into the absorbing state, ``-sub @ 1``.

    A row whose sum is within a few ulps of zero given its entries is taken
    to have no exit; otherwise cancellation would leave spurious rates.
    """
    sub = np.asarray(sub, dtype=float)
    rates = -sub.sum(axis=-1)
    noise = 8 * np.finfo(float).eps * np.abs(sub).sum(axis=-1)
    return np.where(np.abs(rates) <= noise, 0.0, rates)


def extended_generator(sub: np.ndarray) -> np.ndarray:
    """Embed an ``m x m`` sub-generator into the ``(m+1) x (m+1)`` generator."""
    m = sub.shape[0]
    Q = np.zeros((m + 1, m + 1))
    Q[:m, :m] = sub
    Q[:m, m] = exit_rates(sub)
    return Q


@dataclass(frozen=True, eq=False)
class SubGeneratorPair:
    """Sub-generators of the two regimes on the transient states."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        for name, M in (("A", A), ("B", B)):
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ModelError(f"{name} must be a square matrix, got shape {M.shape}")
            if not np.all(np.isfinite(M)):
                raise ModelError(f"{name} has non-finite entries")
        if A.shape != B.shape:
            raise ModelError(f"A and B shapes differ: {A.shape} vs {B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @cached_property
    def Q(self) -> np.ndarray:
        return extended_generator(self.A)

    @cached_property
    def G(self) -> np.ndarray:
        return extended_generator(self.B)


def from_psi(A, psi) -> SubGeneratorPair:
    """Build the pair ``(A, diag(psi) A)``: the switched regime rescales each row."""
    A = np.asarray(A, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 1 or A.ndim != 2 or psi.shape[0] != A.shape[0]:
        raise ModelError(f"psi must have one entry per row of A ({A.shape[0]}), got shape {psi.shape}")
    if np.any(psi < 0) or not np.all(np.isfinite(psi)):
        raise ModelError("psi entries must be finite and nonnegative")
    return SubGeneratorPair(A, psi[:, None] * A)


@dataclass(frozen=True)
class ExitStructure:
    """Exit sets as frozensets of state indices, each including the absorbing index ``m``."""

    m: int
    closed_sets: tuple[frozenset[int], ...]

    def __post_init__(self):
        sets = tuple(frozenset(int(j) for j in g) for g in self.closed_sets)
        object.__setattr__(self, "closed_sets", sets)
        if not sets:
            raise ModelError("at least one exit set is required")
        for k, g in enumerate(sets):
            bad = [j for j in g if not 0 <= j <= self.m]
            if bad:
                raise ModelError(f"exit set {k + 1} has out-of-range states {sorted(bad)}")
            if all(j in g for j in range(self.m)):
                raise ModelError(f"exit set {k + 1} contains every transient state; its complement is empty")

    @classmethod
    def from_transient(cls, m: int, sets: Iterable[Iterable[int]]) -> "ExitStructure":
        """Exit sets given by their transient members; the absorbing state is added."""
        return cls(m, tuple(frozenset(g) | {m} for g in sets))

    @classmethod
    def absorption_only(cls, m: int) -> "ExitStructure":
        return cls(m, (frozenset({m}),))

    @property
    def n(self) -> int:
        return len(self.closed_sets)

    def complement(self, k: int) -> np.ndarray:
        """Transient states outside exit set ``k`` (0-based), as sorted indices."""
        return np.array([j for j in range(self.m) if j not in self.closed_sets[k]], dtype=int)

    @cached_property
    def outside_mask(self) -> np.ndarray:
        """Boolean ``(n, m)`` table: state ``j`` lies outside exit set ``k``."""
        mask = np.ones((self.n, self.m), dtype=bool)
        for k, g in enumerate(self.closed_sets):
            for j in g:
                if j < self.m:
                    mask[k, j] = False
        return mask

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean ``(n, m+1)`` table: state ``j`` belongs to exit set ``k``."""
        mem = np.zeros((self.n, self.m + 1), dtype=bool)
        for k, g in enumerate(self.closed_sets):
            mem[k, sorted(g)] = True
        return mem

    @cached_property
    def survivors(self) -> np.ndarray:
        """Transient states outside every exit set."""
        return np.flatnonzero(self.outside_mask.all(axis=0))


def h_matrix(exits: ExitStructure, k: int) -> np.ndarray:
    """Diagonal 0/1 indicator of the transient states outside exit set ``k`` (0-based)."""
    if not 0 <= k < exits.n:
        raise IndexError(f"exit set index {k} out of range for {exits.n} sets")
    return np.diag(exits.outside_mask[k].astype(float))


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Complete model: states, generators, initial law, switching law and exit sets."""

    space: StateSpace
    gens: SubGeneratorPair
    pi0: np.ndarray
    s0: np.ndarray
    exits: ExitStructure

    def __post_init__(self):
        pi0 = np.array(self.pi0, dtype=float)
        s0 = np.array(self.s0, dtype=float)
        m = self.space.m
        if self.gens.m != m:
            raise ModelError(f"generators are {self.gens.m}x{self.gens.m} but there are {m} transient states")
        if pi0.shape != (m,):
            raise ModelError(f"pi must have {m} entries, got shape {pi0.shape}")
        if s0.shape != (m,):
            raise ModelError(f"s must have {m} entries, got shape {s0.shape}")
        if self.exits.m != m:
            raise ModelError("exit structure was built for a different number of states")
        pi0.setflags(write=False)
        s0.setflags(write=False)
        object.__setattr__(self, "pi0", pi0)
        object.__setattr__(self, "s0", s0)

    @classmethod
    def build(cls, A, B, pi, s, closed_sets=None, labels=None) -> "MixtureModel":
        """Convenience constructor; ``closed_sets`` lists transient members (0-based)."""
        gens = SubGeneratorPair(A, B)
        m = gens.m
        space = StateSpace(tuple(labels)) if labels is not None else StateSpace.numbered(m)
        exits = (
            ExitStructure.absorption_only(m)
            if closed_sets is None
            else ExitStructure.from_transient(m, closed_sets)
        )
        return cls(space, gens, pi, s, exits)

    @property
    def m(self) -> int:
        return self.space.m

    @property
    def n(self) -> int:
        return self.exits.n

    @property
    def A(self) -> np.ndarray:
        return self.gens.A

    @property
    def B(self) -> np.ndarray:
        return self.gens.B

    @cached_property
    def h(self) -> np.ndarray:
        """Stack of exit indicator matrices, shape ``(n, m, m)``."""
        return np.stack([h_matrix(self.exits, k) for k in range(self.n)])

    def check(self, require_absorbing: bool = True) -> "MixtureModel":
        """Return ``self`` if valid, else raise :class:`ModelError` listing violations."""
        violations = validate(self, require_absorbing=require_absorbing)
        if violations:
            raise ModelError("invalid model: " + "; ".join(violations), violations)
        return self


def _label(model: MixtureModel, j: int) -> str:
    return repr(model.space.labels[j])


def validate(model: MixtureModel, require_absorbing: bool = True) -> list[str]:
    """Return every invariant violation as a readable message; empty means valid.

    With ``require_absorbing`` the sub-generators must also be nonsingular,
    i.e. absorption is certain in both regimes. Simulation of stayer-type
    models relaxes this.
    """
    out: list[str] = []
    m = model.m
    for name, M in (("A", model.A), ("B", model.B)):
        diag = np.diag(M)
        for i in np.flatnonzero(diag > 0):
            out.append(f"{name}: diagonal must be <= 0, entry at {_label(model, i)} is {diag[i]!r}")
        off = M - np.diag(diag)
        for i, j in zip(*np.nonzero(off < 0)):
            out.append(
                f"{name}: off-diagonal entries must be >= 0, rate {_label(model, i)}->{_label(model, j)} is {M[i, j]!r}"
            )
        sums = M.sum(axis=1)
        for i in np.flatnonzero(sums > ROW_SUM_TOL):
            out.append(f"{name}: row {_label(model, i)} sums to {sums[i]!r}; row sums must be <= 0")
        if require_absorbing:
            r = float(rcond(M))
            if r < RCOND_TOL:
                out.append(f"{name}: singular sub-generator (rcond {r:.3g}); absorption is not certain")

    pi, s = model.pi0, model.s0
    if not np.all(np.isfinite(pi)) or np.any(pi < 0):
        out.append("pi: entries must be finite and nonnegative")
    elif abs(pi.sum() - 1.0) > ROW_SUM_TOL:
        out.append(f"pi: entries sum to {pi.sum()!r}, must sum to 1")
    if not np.all(np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
        out.append("s: switching probabilities must lie in [0, 1]")

    exits = model.exits
    inter = set(range(m + 1))
    for k, g in enumerate(exits.closed_sets):
        inter &= g
        if m not in g:
            out.append(f"exit set {k + 1} does not contain the absorbing state")
        inside = sorted(j for j in g if j < m)
        outside = [j for j in range(m) if j not in g]
        for name, M in (("A", model.A), ("B", model.B)):
            for i in inside:
                for j in outside:
                    if M[i, j] > 0:
                        out.append(
                            f"exit set {k + 1} is not closed: {name} has rate {M[i, j]!r} "
                            f"from {_label(model, i)} (inside) to {_label(model, j)} (outside)"
                        )
        for i in inside:
            if pi[i] > 0:
                out.append(
                    f"pi: state {_label(model, i)} lies in exit set {k + 1} but has initial mass {pi[i]!r}; "
                    "every exit time must be positive"
                )
    extra = sorted(j for j in inter if j != m)
    if extra:
        out.append(
            "exit sets must intersect only in the absorbing state; common transient states: "
            + ", ".join(_label(model, j) for j in extra)
        )
    return out


# ---------------------------------------------------------------------------
# JSON model files


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not allowed")


def _matrix(obj, key: str, m: int) -> np.ndarray:
    val = obj[key]
    if not isinstance(val, list) or not all(isinstance(r, list) for r in val):
        raise ModelFormatError(f"field {key!r} must be a list of rows")
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ModelFormatError(f"field {key!r} must contain numbers in rectangular rows") from None
    if arr.shape != (m, m):
        raise ModelFormatError(f"field {key!r} must be {m}x{m}, got shape {arr.shape}")
    return arr


def _vector(obj, key: str, m: int) -> np.ndarray:
    val = obj[key]
    if not isinstance(val, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        raise ModelFormatError(f"field {key!r} must be a list of numbers")
    arr = np.array(val, dtype=float)
    if arr.shape != (m,):
        raise ModelFormatError(f"field {key!r} must have {m} entries, got {arr.shape[0]}")
    return arr


def model_from_dict(obj) -> MixtureModel:
    """Build a model from the decoded JSON object of a model file."""
    if not isinstance(obj, dict):
        raise ModelFormatError("model file must hold a JSON object")
    missing = [k for k in ("states", "A", "pi", "s") if k not in obj]
    if missing:
        raise ModelFormatError("missing required fields: " + ", ".join(missing))
    if ("B" in obj) == ("psi" in obj):
        raise ModelFormatError("exactly one of 'B' and 'psi' must be given")
    states = obj["states"]
    if not isinstance(states, list) or not all(isinstance(x, str) for x in states):
        raise ModelFormatError("field 'states' must be a list of strings")
    try:
        space = StateSpace(tuple(states))
    except ModelError as exc:
        raise ModelFormatError(str(exc)) from None
    m = space.m
    A = _matrix(obj, "A", m)
    if "B" in obj:
        gens = SubGeneratorPair(A, _matrix(obj, "B", m))
    else:
        try:
            gens = from_psi(A, _vector(obj, "psi", m))
        except ModelFormatError:
            raise
        except ModelError as exc:
            raise ModelFormatError(str(exc)) from None
    pi = _vector(obj, "pi", m)
    s = _vector(obj, "s", m)

    raw_sets = obj.get("closed_sets", [[]])
    if not isinstance(raw_sets, list) or not all(isinstance(g, list) for g in raw_sets):
        raise ModelFormatError("field 'closed_sets' must be a list of label lists")
    sets = []
    for g in raw_sets:
        members = set()
        for label in g:
            if not isinstance(label, str) or label not in space.labels:
                raise ModelFormatError(f"closed_sets refers to unknown state {label!r}")
            members.add(space.index(label))
        sets.append(members | {m})
    try:
        exits = ExitStructure(m, tuple(frozenset(g) for g in sets))
    except ModelError as exc:
        raise ModelFormatError(str(exc)) from None
    return MixtureModel(space, gens, pi, s, exits)


def loads_model(text: str) -> MixtureModel:
    """Parse a model from JSON text; syntax errors carry line and column."""
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    return model_from_dict(obj)


def load_model(path) -> MixtureModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())


def model_to_dict(model: MixtureModel) -> dict:
    labels = model.space.labels
    m = model.m
    return {
        "states": list(labels),
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "pi": model.pi0.tolist(),
        "s": model.s0.tolist(),
        "closed_sets": [[labels[j] for j in sorted(g) if j < m] for g in model.exits.closed_sets],
    }


def dumps_model(model: MixtureModel) -> str:
    """Serialize to JSON; floats use shortest round-trip form so reloading is exact."""
    return json.dumps(model_to_dict(model), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Worked example families on three transient states with exit sets {2, D}, {3, D}


def _check_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (3,) or np.any(p <= 0) or np.any(p >= 1):
        raise ModelError("switching probabilities must be three values in (0, 1)")
    return p


def exp_mixture(a=(1.0, 2.0), b=(3.0, 4.0), p=(0.3, 0.3, 0.3)) -> MixtureModel:
    """Two independent exponential clocks in each regime.

    From state 1 the chain moves to 2 at rate ``a[0]`` and to 3 at rate
    ``a[1]``; states 2 and 3 then move to absorption at the other clock's
    rate. Both exit times are exponential and never coincide.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (2,) or b.shape != (2,) or np.any(a <= 0) or np.any(b <= 0):
        raise ModelError("exp-mixture rates a and b must be two positive values each")

    def sub(r):
        return np.array([[-(r[0] + r[1]), r[0], r[1]], [0.0, -r[1], 0.0], [0.0, 0.0, -r[0]]])

    return MixtureModel.build(sub(a), sub(b), [1.0, 0.0, 0.0], _check_probs(p), [[1], [2]])


def marshall_olkin(a=(1.0, 2.0, 0.5), b=(2.0, 3.0, 1.5), p=(0.5, 0.5, 0.5)) -> MixtureModel:
    """Two clocks plus a common shock in each regime.

    Rates ``r[0]`` and ``r[1]`` drive the individual exits; ``r[2]`` is the
    shock that ends both at once and creates mass on the diagonal.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for r in (a, b):
        if r.shape != (3,) or r[0] <= 0 or r[1] <= 0 or r[2] < 0:
            raise ModelError("marshall-olkin rates need two positive clock rates and a nonnegative shock rate")

    def sub(r):
        total = r.sum()
        return np.array(
            [[-total, r[0], r[1]], [0.0, -(r[1] + r[2]), 0.0], [0.0, 0.0, -(r[0] + r[2])]]
        )

    return MixtureModel.build(sub(a), sub(b), [1.0, 0.0, 0.0], _check_probs(p), [[1], [2]])
