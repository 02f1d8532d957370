"""Side-by-side comparison of analytic values with Monte Carlo estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checks import bivariate_integral
from .distributions import (
    NO_EXIT,
    competing_risk,
    singular_cdf_bi,
    survival_joint,
    tie_probability,
)
from .model import MixtureModel
from .observation import NoInfo, update
from .simulate import SimConfig, simulate

Z_LIMIT = 4.0
NORMALIZATION_TOL = 1e-6
LOW_PRECISION_ESS = 10_000


@dataclass(frozen=True)
class CheckRow:
    check: str
    inputs: str
    analytic: float
    estimate: float
    se: float
    z: float

    @property
    def ok(self) -> bool:
        return abs(self.z) <= Z_LIMIT


@dataclass
class VerifyReport:
    replicates: int
    accepted: int
    seed: int
    condition_time: float
    rows: list[CheckRow] = field(default_factory=list)
    normalization: tuple[float, float] | None = None
    truncated: int = 0

    @property
    def normalization_ok(self) -> bool:
        if self.normalization is None:
            return True
        total, expected = self.normalization
        return abs(total - expected) <= NORMALIZATION_TOL

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows) and self.normalization_ok

    @property
    def low_precision(self) -> bool:
        return self.accepted < LOW_PRECISION_ESS

    def render(self) -> str:
        lines = [
            f"replicates: {self.replicates}",
            f"accepted: {self.accepted}",
            f"seed: {self.seed}",
            f"condition-time: {self.condition_time!r}",
            f"truncated: {self.truncated}",
            "check,inputs,analytic,estimate,se,z,status",
        ]
        for r in self.rows:
            status = "ok" if r.ok else "FAIL"
            lines.append(f"{r.check},{r.inputs},{r.analytic!r},{r.estimate!r},{r.se!r},{r.z!r},{status}")
        if self.normalization is not None:
            total, expected = self.normalization
            status = "ok" if self.normalization_ok else "FAIL"
            lines.append(f"normalization,quadrature,{expected!r},{total!r},,{total - expected!r},{status}")
        if self.low_precision:
            lines.append(f"warning: low precision, only {self.accepted} accepted replicates (want >= {LOW_PRECISION_ESS})")
        failures = sum(not r.ok for r in self.rows) + (not self.normalization_ok)
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'} ({failures} failing checks)")
        return "\n".join(lines) + "\n"


def _inputs(names, values) -> str:
    return ";".join(f"{k}={float(v)!r}" for k, v in zip(names, values))


def verify(
    model: MixtureModel,
    points,
    n: int,
    seed: int,
    t: float = 0.0,
    sim_model: MixtureModel | None = None,
    threads: int | None = None,
) -> VerifyReport:
    """Compare joint survival, diagonal mass and first-exit causes against simulation.

    ``points`` has shape ``(P, n_exits)``. Conditioning is survival to ``t``.
    ``sim_model`` lets the simulation run on a different model, which is how
    a negative control is built.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    belief = update(model, NoInfo(t))
    config = SimConfig(n=n, seed=seed, condition_time=t if t > 0 else None)
    result = simulate(sim_model if sim_model is not None else model, config, threads=threads)
    report = VerifyReport(n, result.ess, seed, float(t), truncated=result.truncation_count)
    names = [f"t{k + 1}" for k in range(model.n)]

    analytic = np.atleast_1d(survival_joint(model, belief, NO_EXIT, points))
    est = result.joint_survival(points)
    zs = np.atleast_1d(est.z(analytic))
    for p, a, v, se, z in zip(points, analytic, np.atleast_1d(est.value), np.atleast_1d(est.se), zs):
        report.rows.append(CheckRow("survival", _inputs(names, p), float(a), float(v), float(se), float(z)))

    if model.n == 2:
        a = singular_cdf_bi(model, belief, NO_EXIT, t)
        e = result.singular_mass(t)
        report.rows.append(CheckRow("singular-mass", _inputs(["t1"], [t]), float(a), e.value, e.se, e.z(a)))

    for k in range(model.n):
        a = competing_risk(model, belief, NO_EXIT, np.inf, k)
        e = result.competing_risks(np.inf, k, t)
        report.rows.append(CheckRow("competing-risk", f"cause={k + 1};s=inf", a, e.value, e.se, e.z(a)))
    if model.n > 1:
        a = tie_probability(model, belief, NO_EXIT, np.inf)
        e = result.tie_fraction(np.inf, t)
        report.rows.append(CheckRow("tie", "s=inf", a, e.value, e.se, e.z(a)))

    if model.n == 2:
        total = bivariate_integral(model, belief, NO_EXIT)["total"]
        expected = float(survival_joint(model, belief, NO_EXIT, [t, t]))
        report.normalization = (total, expected)
    return report
