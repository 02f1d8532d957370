import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from phmix.cli import EXIT_OK, EXIT_PARSE, EXIT_SEMANTIC, EXIT_VERIFY, GridSyntaxError, fmt, main, parse_grid
from phmix.distributions import NO_EXIT, is_singular_free, survival_joint
from phmix.model import dumps_model, exp_mixture, loads_model, marshall_olkin, model_to_dict
from phmix.observation import BeliefState


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def rows(text):
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


@pytest.fixture
def ex1_file(tmp_path):
    path = tmp_path / "ex1.json"
    path.write_text(dumps_model(exp_mixture()))
    return path


@pytest.fixture
def ex2_file(tmp_path):
    path = tmp_path / "ex2.json"
    path.write_text(dumps_model(marshall_olkin()))
    return path


def write_model(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


class TestGrid:
    def test_range_is_inclusive_and_exact(self):
        axes = parse_grid("t=0; t1=0:1:0.1; t2=0.5,1")
        assert axes["t"] == [0.0]
        assert axes["t1"] == [k / 10 for k in range(11)]
        assert axes["t2"] == [0.5, 1.0]

    @pytest.mark.parametrize("spec", ["t1", "t1=0:1", "t1=a,b", "t1=1; t1=2", "t1=1:0:0.1", "t1=0:1:0"])
    def test_syntax_errors(self, spec):
        with pytest.raises(GridSyntaxError):
            parse_grid(spec)

    def test_format(self):
        assert fmt(0.1) == "0.1"
        assert fmt(float("nan")) == "undefined"
        x = 1 / 3
        assert float(fmt(x)) == x


class TestValidate:
    def test_ok(self, ex1_file):
        assert run("validate", ex1_file) == (EXIT_OK, "OK\n", "")

    def test_pi_violation(self, tmp_path):
        obj = model_to_dict(exp_mixture())
        obj["pi"] = [0.9, 0.0, 0.0]
        code, out, _ = run("validate", write_model(tmp_path, "bad.json", obj))
        assert code == EXIT_SEMANTIC and "pi" in out

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"states": [\n  "1",\n  oops]}')
        code, _, err = run("validate", path)
        assert code == EXIT_PARSE and "line 3" in err

    def test_missing_file(self, tmp_path):
        assert run("validate", tmp_path / "none.json")[0] == EXIT_PARSE


class TestEval:
    def test_example1_survival(self, ex1_file):
        code, out, _ = run("eval", ex1_file, "--quantity", "survival", "--at", "t=0; t1=0.5; t2=0.25")
        assert code == EXIT_OK
        (row,) = rows(out)
        expected = 0.3 * math.exp(-1.5) * math.exp(-1.0) + 0.7 * math.exp(-0.5) * math.exp(-0.5)
        assert float(row["value"]) == pytest.approx(expected, rel=1e-14)

    def test_survival_at_conditioning_time(self, ex2_file):
        _, out, _ = run("eval", ex2_file, "--quantity", "survival", "--at", "t=0.4; t1=0.4; t2=0.4", "--condition", "state=1")
        assert float(rows(out)[0]["value"]) == pytest.approx(1.0, abs=1e-15)

    def test_moment_zero(self, ex1_file):
        _, out, _ = run("eval", ex1_file, "--quantity", "moment", "--at", "n=0,1")
        got = rows(out)
        assert got[0]["value"] == "1.0"

    def test_density_has_branch_column(self, ex2_file):
        code, out, _ = run("eval", ex2_file, "--quantity", "density", "--at", "t1=0:1:0.5; t2=0:1:0.5")
        assert code == EXIT_OK
        got = rows(out)
        assert len(got) == 9
        assert {r["branch"] for r in got} == {"component1", "component2", "singular"}
        diag = [r for r in got if r["t1"] == r["t2"]]
        assert all(r["branch"] == "singular" for r in diag)

    @pytest.mark.parametrize(
        "quantity,at",
        [
            ("laplace", "lambda=0,1"),
            ("laplace", "lambda1=0,1; lambda2=2"),
            ("transition", "t=0.2; s=1"),
            ("singular-mass", "t1=0,1"),
            ("cross-moment", ""),
            ("marginal", "k=1,2; s=0.5"),
            ("competing-risk", "k=1,2; s=0.5"),
            ("survival", "s=0.5"),
            ("density", "s=0.5"),
        ],
    )
    def test_all_quantities(self, ex2_file, quantity, at):
        code, out, err = run("eval", ex2_file, "--quantity", quantity, "--at", at)
        assert code == EXIT_OK, err
        for r in rows(out):
            assert all(v for v in r.values())

    def test_csv_round_trips(self, ex2_file):
        _, out, _ = run("eval", ex2_file, "--quantity", "survival", "--at", "t1=0:2:0.25; t2=0.3")
        model = marshall_olkin()
        for r in rows(out):
            exact = survival_joint(model, BeliefState.prior(model), NO_EXIT, [float(r["t1"]), float(r["t2"])])
            assert float(r["value"]) == exact

    def test_absorbing_conditioning(self, ex1_file):
        code, _, err = run("eval", ex1_file, "--quantity", "survival", "--at", "t1=1; t2=1", "--condition", "state=D")
        assert code == EXIT_SEMANTIC and "absorbing" in err

    def test_axis_mismatch(self, ex1_file):
        assert run("eval", ex1_file, "--quantity", "survival", "--at", "t1=1")[0] == EXIT_SEMANTIC

    def test_grid_parse_error(self, ex1_file):
        assert run("eval", ex1_file, "--quantity", "survival", "--at", "t1=x; t2=1")[0] == EXIT_PARSE

    def test_undefined_token(self, tmp_path):
        obj = {"states": ["1", "2", "D"], "A": [[-1, 0], [0, -2]], "B": [[-2, 0], [0, -4]], "pi": [1, 0], "s": [0.5, 0.5]}
        path = write_model(tmp_path, "diag.json", obj)
        code, out, _ = run("eval", path, "--quantity", "transition", "--at", "t=1; s=2", "--info", "start=1")
        assert code == EXIT_OK
        assert any(r["value"] == "undefined" for r in rows(out) if r["from"] == "2")


class TestUpdate:
    def path_file(self, tmp_path, text):
        path = tmp_path / "path.csv"
        path.write_text(text)
        return path

    def test_time_zero(self, tmp_path, ex2_file):
        path = self.path_file(tmp_path, "time,state\n0,1\nhorizon,0\n")
        code, out, _ = run("update", ex2_file, path, "--mode", "none")
        assert code == EXIT_OK
        got = rows(out)
        assert [float(r["s"]) for r in got] == [0.5, 0.5, 0.5]
        assert [float(r["pi"]) for r in got] == [1.0, 0.0, 0.0]

    def test_markov_known_start(self, tmp_path):
        obj = model_to_dict(exp_mixture())
        obj["B"] = obj["A"]
        obj["s"] = [0.2, 0.7, 0.9]
        model = write_model(tmp_path, "markov.json", obj)
        path = self.path_file(tmp_path, "time,state\n0,1\n0.5,3\nhorizon,1.5\n")
        _, out, _ = run("update", model, path, "--mode", "full")
        defined = [r["s"] for r in rows(out) if r["s"] != "undefined"]
        assert defined == ["0.2"]
        _, out, _ = run("update", model, path, "--mode", "none-known-start")
        defined = [float(r["s"]) for r in rows(out) if r["s"] != "undefined"]
        np.testing.assert_allclose(defined, 0.2, atol=1e-14)

    def test_scalar_ln2(self, tmp_path):
        obj = {"states": ["1", "D"], "A": [[-1.0]], "B": [[-2.0]], "pi": [1.0], "s": [0.5]}
        model = write_model(tmp_path, "one.json", obj)
        path = self.path_file(tmp_path, f"time,state\n0,1\nhorizon,{math.log(2)!r}\n")
        _, out, _ = run("update", model, path, "--mode", "none-known-start")
        assert float(rows(out)[0]["s"]) == pytest.approx(1 / 3, abs=1e-15)

    def test_unknown_label(self, tmp_path, ex1_file):
        path = self.path_file(tmp_path, "time,state\n0,1\n0.5,7\nhorizon,1\n")
        assert run("update", ex1_file, path)[0] == EXIT_SEMANTIC

    def test_bad_csv(self, tmp_path, ex1_file):
        path = self.path_file(tmp_path, "when,where\n0,1\nhorizon,1\n")
        assert run("update", ex1_file, path)[0] == EXIT_PARSE


class TestSimulate:
    def test_output(self, ex2_file):
        code, out, _ = run("simulate", ex2_file, "--n", 5, "--seed", 3)
        assert code == EXIT_OK
        got = rows(out)
        assert len(got) == 5 and set(got[0]) == {"replicate", "initial", "regime", "tau1", "tau2", "accepted"}

    def test_conditioning_state(self, ex2_file):
        code, out, _ = run("simulate", ex2_file, "--n", 200, "--seed", 3, "--condition-time", 0.2, "--condition-state", "2")
        assert code == EXIT_OK
        assert any(r["accepted"] == "1" for r in rows(out))


class TestVerify:
    def test_example1_passes(self, ex1_file):
        code, out, _ = run("verify", ex1_file, "--n", 10**6, "--seed", 1, "--grid", "t1=0.25,0.5,1; t2=0.25,1")
        assert code == EXIT_OK, out
        assert out.strip().endswith("result: PASS (0 failing checks)")
        assert "warning" not in out

    def test_negative_control(self, tmp_path, ex1_file):
        wrong = tmp_path / "wrong.json"
        wrong.write_text(dumps_model(exp_mixture((1.5, 2.0), (3.0, 4.0))))
        code, out, _ = run("verify", ex1_file, "--n", 10**5, "--seed", 1, "--grid", "t1=0.5; t2=0.25", "--sim-model", wrong)
        assert code == EXIT_VERIFY
        assert "FAIL" in out

    def test_low_precision_flag(self, ex1_file):
        code, out, _ = run("verify", ex1_file, "--n", 100, "--seed", 1, "--grid", "t1=0.5; t2=0.25")
        assert code == EXIT_OK
        assert "warning: low precision" in out

    def test_grid_before_conditioning_time(self, ex1_file):
        assert run("verify", ex1_file, "--n", 100, "--grid", "t1=0.2; t2=0.5", "--t", 0.3)[0] == EXIT_SEMANTIC

    def test_byte_identical_across_threads(self, ex2_file, monkeypatch):
        args = ("verify", ex2_file, "--n", 100_000, "--seed", 7, "--grid", "t1=0.5,1; t2=0.5", "--t", 0.2)
        outs = []
        for threads in ("1", "1", "4"):
            monkeypatch.setenv("PHMIX_THREADS", threads)
            outs.append(run(*args)[1])
        assert outs[0] == outs[1] == outs[2]


class TestExample:
    def test_exp_mixture_round_trip(self, tmp_path):
        code, out, _ = run("example", "exp-mixture", "--a", "1,2", "--b", "3,4", "--p", "0.3,0.3,0.3")
        assert code == EXIT_OK
        model = loads_model(out)
        ref = exp_mixture()
        np.testing.assert_array_equal(model.A, ref.A)
        np.testing.assert_array_equal(model.B, ref.B)
        path = tmp_path / "m.json"
        path.write_text(out)
        assert run("validate", path)[0] == EXIT_OK

    def test_marshall_olkin_singularity(self):
        _, out, _ = run("example", "marshall-olkin", "--a", "1,2,0", "--b", "2,3,0")
        assert is_singular_free(loads_model(out))
        _, out, _ = run("example", "marshall-olkin")
        assert not is_singular_free(loads_model(out))

    @pytest.mark.parametrize("flag,value", [("--a", "0,2"), ("--a", "1"), ("--p", "0.5,1,0.5")])
    def test_bad_parameters(self, flag, value):
        assert run("example", "exp-mixture", flag, value)[0] == EXIT_SEMANTIC


def test_usage_error_and_module_entry():
    assert run("bogus")[0] == EXIT_SEMANTIC
    proc = subprocess.run([sys.executable, "-m", "phmix", "example", "exp-mixture"], capture_output=True, text=True)
    assert proc.returncode == 0 and loads_model(proc.stdout).m == 3
