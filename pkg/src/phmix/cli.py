"""Command-line interface.

Exit codes: 0 success, 1 parse error, 2 semantic error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from decimal import Decimal, InvalidOperation

import numpy as np

from . import distributions as dist
from .matrix_core import SingularMatrixError
from .model import (
    ModelError,
    ModelFormatError,
    dumps_model,
    exp_mixture,
    load_model,
    marshall_olkin,
    validate,
)
from .observation import (
    FullPath,
    NoInfo,
    NoInfoKnownStart,
    ObservationError,
    PathError,
    PathFormatError,
    read_path_csv,
    update,
)
from .simulate import SimConfig, SimulationError, simulate
from .verify import verify

EXIT_OK, EXIT_PARSE, EXIT_SEMANTIC, EXIT_VERIFY = 0, 1, 2, 3
UNDEFINED = "undefined"


class GridSyntaxError(ValueError):
    """The ``--at`` / ``--grid`` specification cannot be parsed."""


class SemanticError(ValueError):
    """Arguments parse but are inconsistent with the model."""


def fmt(x) -> str:
    """Shortest round-trip decimal form; NaN becomes the undefined token."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return UNDEFINED
    return repr(x)


def _axis_values(name: str, text: str) -> list[float]:
    text = text.strip()
    try:
        if ":" in text:
            parts = [Decimal(p.strip()) for p in text.split(":")]
            if len(parts) != 3:
                raise GridSyntaxError(f"axis {name!r}: ranges are start:stop:step")
            start, stop, step = parts
            if not step > 0 or stop < start:
                raise GridSyntaxError(f"axis {name!r}: need a positive step and stop >= start")
            count = int((stop - start) / step) + 1
            return [float(start + k * step) for k in range(count)]
        return [float(Decimal(p.strip())) for p in text.split(",")]
    except InvalidOperation:
        raise GridSyntaxError(f"axis {name!r}: cannot parse {text!r}") from None


def parse_grid(spec: str) -> dict[str, list[float]]:
    """Parse ``"t=0; t1=0:2:0.25; t2=0.5,1"`` into ordered axes (stop is inclusive)."""
    axes: dict[str, list[float]] = {}
    for item in spec.split(";"):
        if not item.strip():
            continue
        if "=" not in item:
            raise GridSyntaxError(f"expected name=values, got {item.strip()!r}")
        name, values = (p.strip() for p in item.split("=", 1))
        if not name or name in axes:
            raise GridSyntaxError(f"missing or repeated axis name {name!r}")
        axes[name] = _axis_values(name, values)
    return axes


def _product(axes, names):
    return [tuple(p) for p in itertools.product(*(axes[n] for n in names))]


def _state(model, label: str) -> int:
    try:
        i = model.space.index(label)
    except ModelError:
        raise SemanticError(f"unknown state label {label!r}") from None
    if i == model.m:
        raise SemanticError(f"state {label!r} is absorbing; conditioning needs a transient state")
    return i


def _conditioning(model, spec: str):
    spec = spec.strip()
    if spec in ("no-exit", "none"):
        return dist.NO_EXIT
    if spec.startswith("state="):
        return dist.AtState(_state(model, spec[len("state=") :]))
    raise SemanticError(f"condition must be 'no-exit' or 'state=LABEL', got {spec!r}")


def _belief(model, info: str, t: float | None):
    info = info.strip()
    if info.startswith("path="):
        path = read_path_csv(info[len("path=") :], model.space)
        if t is not None and t != path.horizon:
            raise SemanticError(f"grid t={t!r} differs from the path horizon {path.horizon!r}")
        return update(model, FullPath(path))
    t = 0.0 if t is None else t
    if info == "none":
        return update(model, NoInfo(t))
    if info.startswith("start="):
        return update(model, NoInfoKnownStart(t, _state(model, info[len("start=") :])))
    raise SemanticError(f"info must be 'none', 'start=LABEL' or 'path=FILE', got {info!r}")


def _load_valid(path):
    model = load_model(path)
    problems = validate(model)
    if problems:
        raise ModelError("invalid model", problems)
    return model


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate(args, out) -> int:
    model = load_model(args.model)
    problems = validate(model)
    if problems:
        for p in problems:
            out.write(p + "\n")
        return EXIT_SEMANTIC
    out.write("OK\n")
    return EXIT_OK


def _single_t(axes) -> float | None:
    if "t" not in axes:
        return None
    if len(axes["t"]) != 1:
        raise SemanticError("the conditioning time t takes a single value")
    return axes["t"][0]


def _rows_eval(model, belief, cond, q: str, axes, residual: bool):
    exit_names = [f"t{k + 1}" for k in range(model.n)]
    has = set(axes) - {"t"}

    def need(names):
        if set(names) != has:
            raise SemanticError(f"quantity {q!r} needs grid axes {', '.join(names)}; got {', '.join(sorted(has)) or 'none'}")

    if q in ("survival", "density") and has == {"s"}:
        fn = dist.survival_uni if q == "survival" else dist.density_uni
        return ["s", "value"], [(s, fn(model, belief, cond, s)) for (s,) in _product(axes, ["s"])]
    if q == "survival":
        need(exit_names)
        pts = _product(axes, exit_names)
        vals = np.atleast_1d(dist.survival_joint(model, belief, cond, np.array(pts)))
        return exit_names + ["value"], [p + (v,) for p, v in zip(pts, vals)]
    if q == "density":
        need(exit_names)
        pts = _product(axes, exit_names)
        if model.n == 2:
            arr = np.array(pts)
            ev = dist.density_joint_bi(model, belief, cond, arr[:, 0], arr[:, 1])
            names = np.atleast_1d(ev.branch_name)
            return exit_names + ["value", "branch"], [p + (v, b) for p, v, b in zip(pts, ev.value, names)]
        rows = []
        for p in pts:
            if len(set(p)) < len(p):
                rows.append(p + (float("nan"),))
            else:
                rows.append(p + (dist.density_joint_multi(model, belief, cond, np.array(p)),))
        return exit_names + ["value"], rows
    if q == "laplace":
        if has == {"lambda"}:
            return ["lambda", "value"], [
                (x, dist.laplace_uni(model, belief, cond, x, residual)) for (x,) in _product(axes, ["lambda"])
            ]
        need(["lambda1", "lambda2"])
        return ["lambda1", "lambda2", "value"], [
            (a, b, dist.laplace_joint_bi(model, belief, cond, a, b, residual))
            for a, b in _product(axes, ["lambda1", "lambda2"])
        ]
    if q == "moment":
        need(["n"])
        rows = []
        for (n,) in _product(axes, ["n"]):
            if n != int(n) or n < 0:
                raise SemanticError("moment order n must be a nonnegative integer")
            rows.append((int(n), dist.moment_uni(model, belief, cond, int(n), residual)))
        return ["n", "value"], rows
    if q == "cross-moment":
        need([])
        return ["value"], [(dist.cross_moment_bi(model, belief, cond, residual),)]
    if q == "transition":
        need(["s"])
        labels = model.space.labels
        rows = []
        for (s,) in _product(axes, ["s"]):
            P = dist.transition_matrix(model, belief, s)
            rows += [(s, labels[i], labels[j], P[i, j]) for i in range(model.m + 1) for j in range(model.m + 1)]
        return ["s", "from", "to", "value"], rows
    if q == "singular-mass":
        need(["t1"])
        return ["t1", "value"], [(x, dist.singular_cdf_bi(model, belief, cond, x)) for (x,) in _product(axes, ["t1"])]
    if q == "marginal":
        need(["k", "s"])
        return ["k", "s", "value"], [
            (int(k), s, dist.marginal_exit(model, belief, cond, _cause(model, k), s)) for k, s in _product(axes, ["k", "s"])
        ]
    if q == "competing-risk":
        need(["k", "s"])
        return ["k", "s", "value"], [
            (int(k), s, dist.competing_risk(model, belief, cond, s, _cause(model, k))) for k, s in _product(axes, ["k", "s"])
        ]
    raise SemanticError(f"unknown quantity {q!r}")


def _cause(model, k: float) -> int:
    if k != int(k) or not 1 <= k <= model.n:
        raise SemanticError(f"exit set number must be an integer in 1..{model.n}")
    return int(k) - 1


def cmd_eval(args, out) -> int:
    model = _load_valid(args.model)
    axes = parse_grid(args.at)
    belief = _belief(model, args.info, _single_t(axes))
    cond = _conditioning(model, args.condition)
    header, rows = _rows_eval(model, belief, cond, args.quantity, axes, not args.absolute)
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(x if isinstance(x, str) else fmt(x) for x in row) + "\n")
    return EXIT_OK


def cmd_update(args, out) -> int:
    model = _load_valid(args.model)
    path = read_path_csv(args.path, model.space)
    if args.mode == "full":
        info = FullPath(path)
    elif args.mode == "none":
        info = NoInfo(path.horizon)
    else:
        info = NoInfoKnownStart(path.horizon, path.initial)
    belief = update(model, info)
    out.write("state,s,pi\n")
    for j in range(model.m):
        out.write(f"{model.space.labels[j]},{fmt(belief.s[j])},{fmt(belief.pi[j])}\n")
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    model = load_model(args.model)
    problems = validate(model, require_absorbing=False)
    if problems:
        raise ModelError("invalid model", problems)
    state = None if args.condition_state is None else _state(model, args.condition_state)
    config = SimConfig(args.n, args.seed, args.t_max, args.condition_time, state)
    result = simulate(model, config)
    keep = result.accepted
    labels = model.space.labels
    out.write("replicate,initial,regime," + ",".join(f"tau{k + 1}" for k in range(model.n)) + ",accepted\n")
    for r in range(config.n):
        taus = ",".join(fmt(x) for x in result.exit_times[r])
        out.write(f"{r},{labels[result.initial[r]]},{result.regime[r]},{taus},{int(keep[r])}\n")
    return EXIT_OK


def cmd_verify(args, out) -> int:
    model = _load_valid(args.model)
    sim_model = _load_valid(args.sim_model) if args.sim_model else None
    if sim_model is not None and (sim_model.m != model.m or sim_model.n != model.n):
        raise SemanticError("simulation model must have the same states and exit sets")
    axes = parse_grid(args.grid)
    names = [f"t{k + 1}" for k in range(model.n)]
    if set(axes) != set(names):
        raise SemanticError(f"grid needs exactly the axes {', '.join(names)}")
    if args.n < 1:
        raise SemanticError("--n must be positive")
    points = np.array(_product(axes, names))
    report = verify(model, points, args.n, args.seed, args.t, sim_model)
    out.write(report.render())
    return EXIT_OK if report.passed else EXIT_VERIFY


def _floats(text: str, count: int, name: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(Decimal(x.strip())) for x in text.split(","))
    except InvalidOperation:
        raise GridSyntaxError(f"--{name}: cannot parse {text!r}") from None
    if len(vals) != count:
        raise SemanticError(f"--{name} needs {count} comma-separated values")
    return vals


def cmd_example(args, out) -> int:
    if args.name == "exp-mixture":
        kw = {"a": (1.0, 2.0), "b": (3.0, 4.0), "p": (0.3, 0.3, 0.3)}
        sizes = {"a": 2, "b": 2, "p": 3}
        build = exp_mixture
    else:
        kw = {"a": (1.0, 2.0, 0.5), "b": (2.0, 3.0, 1.5), "p": (0.5, 0.5, 0.5)}
        sizes = {"a": 3, "b": 3, "p": 3}
        build = marshall_olkin
    for key in kw:
        text = getattr(args, key)
        if text is not None:
            kw[key] = _floats(text, sizes[key], key)
    out.write(dumps_model(build(**kw)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="evaluate a distributional quantity on a grid")
    p.add_argument("model")
    p.add_argument(
        "--quantity",
        required=True,
        choices=[
            "survival",
            "density",
            "laplace",
            "moment",
            "transition",
            "singular-mass",
            "cross-moment",
            "marginal",
            "competing-risk",
        ],
    )
    p.add_argument("--at", default="", help='grid such as "t=0; t1=0:2:0.25; t2=0:2:0.25"')
    p.add_argument("--condition", default="no-exit", help="'no-exit' or 'state=LABEL'")
    p.add_argument("--info", default="none", help="'none', 'start=LABEL' or 'path=FILE'")
    p.add_argument("--absolute", action="store_true", help="report transforms and moments of tau instead of tau - t")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("update", help="Bayesian update from a path file")
    p.add_argument("model")
    p.add_argument("path")
    p.add_argument("--mode", choices=["full", "none", "none-known-start"], default="full")
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("simulate", help="simulate replicates and print exit times")
    p.add_argument("model")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--condition-time", type=float, default=None)
    p.add_argument("--condition-state", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="compare analytic values with Monte Carlo")
    p.add_argument("model")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", required=True, help='query grid such as "t1=0.5,1; t2=0.25"')
    p.add_argument("--t", type=float, default=0.0, help="condition on survival to this time")
    p.add_argument("--sim-model", default=None, help="simulate this model instead (negative control)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("example", help="print a built-in example model")
    p.add_argument("name", choices=["exp-mixture", "marshall-olkin"])
    p.add_argument("--a", default=None, help="slow-regime rates, comma separated")
    p.add_argument("--b", default=None, help="switched-regime rates, comma separated")
    p.add_argument("--p", default=None, help="switching probabilities for the three transient states")
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SEMANTIC if exc.code else EXIT_OK
    try:
        return args.func(args, out)
    except (ModelFormatError, PathFormatError, GridSyntaxError) as exc:
        err.write(f"parse error: {exc}\n")
        return EXIT_PARSE
    except ModelError as exc:
        for v in exc.violations or [str(exc)]:
            err.write(v + "\n")
        return EXIT_SEMANTIC
    except OSError as exc:
        err.write(f"cannot read input: {exc}\n")
        return EXIT_PARSE
    except (
        SemanticError,
        PathError,
        ObservationError,
        SimulationError,
        SingularMatrixError,
        dist.UndefinedBeliefError,
        ValueError,
        IndexError,
    ) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_SEMANTIC


if __name__ == "__main__":
    sys.exit(main())
