import io
import json
import math

import numpy as np
import pytest

from smoothmle import cli
from smoothmle.rng import stream


def run(*argv):
    out = io.StringIO()
    code = cli.main(list(argv), out=out)
    return code, out.getvalue()


def kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def gauss_json(tmp_path):
    p = tmp_path / "gaussian.json"
    p.write_text('{"type": "mixture", "components": [{"w": 1, "mu": 0, "sigma": 1}]}')
    return str(p)


@pytest.fixture
def samples(tmp_path):
    x = stream(4, "cli").standard_normal(400) + 0.25
    p = tmp_path / "s.txt"
    p.write_text("# header comment\n" + "\n".join(repr(float(v)) for v in x) + "\n\n# end\n")
    return str(p)


class TestFisher:
    def test_gaussian(self, gauss_json):
        code, text = run("fisher", "--dist", gauss_json, "--r", "1")
        assert code == 0
        d = kv(text)
        assert float(d["I_r"]) == pytest.approx(0.5, abs=1e-12)
        assert float(d["bound"]) == 1.0

    def test_missing_radius(self, gauss_json):
        assert run("fisher", "--dist", gauss_json)[0] == 2

    def test_bad_radius(self, gauss_json):
        assert run("fisher", "--dist", gauss_json, "--r", "0")[0] == 2

    def test_unreadable_dist(self, tmp_path):
        assert run("fisher", "--dist", str(tmp_path / "nope.json"), "--r", "1")[0] == 2

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert run("fisher", "--dist", str(p), "--r", "1")[0] == 2


class TestEstimate:
    def test_fields_and_determinism(self, gauss_json, samples):
        a = run("estimate", "--dist", gauss_json, "--delta", "0.05", "--seed", "7",
                "--samples", samples)
        b = run("estimate", "--dist", gauss_json, "--delta", "0.05", "--seed", "7",
                "--samples", samples)
        assert a == b and a[0] == 0
        d = kv(a[1])
        for key in ("seed", "lambda_hat", "interval_lo", "interval_hi", "r_used", "I_r",
                    "predicted_bound"):
            assert key in d
        assert d["seed"] == "7" and d["n"] == "400"
        assert float(d["interval_lo"]) <= float(d["lambda_hat"]) <= float(d["interval_hi"])

    def test_seed_defaults_to_zero(self, gauss_json, samples):
        assert kv(run("estimate", "--dist", gauss_json, "--samples", samples)[1])["seed"] == "0"

    def test_bad_sample_line(self, gauss_json, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("1.0\nabc\n")
        assert run("estimate", "--dist", gauss_json, "--samples", str(p))[0] == 2

    def test_infeasible_smoothing_is_numeric(self, gauss_json, samples):
        code, _ = run("estimate", "--dist", gauss_json, "--samples", samples,
                      "--eps-max", "0.01", "--gamma", "50")
        assert code == 3

    def test_no_root_is_numeric(self, gauss_json, samples, monkeypatch):
        from smoothmle import estimators
        from smoothmle.errors import NoRootInInterval

        def no_root(f, x, delta, rng, cfg):
            res = estimators.EstimateResult(0.5, (0.0, 1.0), 0.3, 1.0, 0.1, 2.0,
                                            ["no sign change; argmin |score| fallback"])
            raise NoRootInInterval("no sign change", result=res)

        monkeypatch.setattr(estimators, "global_mle", no_root)
        code, text = run("estimate", "--dist", gauss_json, "--samples", samples)
        assert code == 3
        d = kv(text)
        assert d["flagged"] == "true" and d["lambda_hat"] == "0.5"


class TestScoreScan:
    def test_csv(self, gauss_json):
        code, text = run("score-scan", "--dist", gauss_json, "--r", "1", "--lo", "-1",
                         "--hi", "1", "--points", "3")
        assert code == 0
        lines = text.splitlines()
        assert lines[0] == "x,s,s_prime"
        x, s, ds = map(float, lines[1].split(","))
        assert (x, s, ds) == (-1.0, 0.5, -0.5)

    def test_default_range(self):
        code, text = run("score-scan", "--dist", "laplace", "--r", "0.1")
        assert code == 0 and len(text.splitlines()) == 1001


class TestExperiments:
    def test_heatmap_header(self, tmp_path):
        out = tmp_path / "h.csv"
        code, text = run("heatmap", "--dist", "spiked_laplace", "--out", str(out),
                         "--seed", "1", "--n", "50", "--r", "0.01,0.1", "--trials", "3")
        assert code == 0
        assert out.read_text().splitlines()[0] == "n,r,mse,mean_abs_err,q90,q95,trials,failures"
        assert kv(text)["seed"] == "1"

    def test_errors_and_coverage(self):
        code, text = run("errors", "--dist", "laplace", "--n", "100", "--r", "0.1",
                         "--trials", "2", "--estimators", "mean,median")
        assert code == 0 and text.splitlines()[0] == "estimator,trial,error"
        code, text = run("coverage", "--dist", "gaussian", "--n", "200", "--trials", "5")
        assert code == 0 and text.splitlines()[0] == "factor,coverage,trials"

    def test_bad_estimator(self):
        assert run("errors", "--dist", "laplace", "--estimators", "lv")[0] == 2

    def test_bad_list(self):
        assert run("heatmap", "--dist", "laplace", "--n", "1,x")[0] == 2


class TestLowerbound:
    def test_json(self, gauss_json):
        code, text = run("lowerbound", "--dist", gauss_json, "--r", "0.4", "--eps", "0.05",
                         "--n", "100", "--trials", "1000", "--seed", "2")
        assert code == 0
        doc = json.loads(text)
        assert doc["seed"] == 2 and len(doc["conditions"]) == 6
        assert 0 <= doc["tv_complement_estimate"] <= 1
        assert doc["delta_floor"] > 0

    def test_shift_zero(self, gauss_json):
        assert run("lowerbound", "--dist", gauss_json, "--r", "1", "--shift", "0")[0] == 2

    def test_eps_xor_shift(self, gauss_json):
        assert run("lowerbound", "--dist", gauss_json, "--r", "1")[0] == 2


class TestCheckInvariants:
    def test_filtered_run(self):
        code, text = run("check-invariants", "--only", "Fisher upper")
        assert code == 0
        assert text.splitlines()[-1] == "checks=1 failed=0"

    def test_violation_exit_code(self):
        # the delta floor check is a known violation of the diagnostic formula
        code, text = run("check-invariants", "--only", "delta floor")
        assert code == 1 and "FAIL" in text


class TestUsage:
    def test_unknown_command(self):
        assert run("bogus")[0] == 2

    def test_no_command(self):
        assert run()[0] == 2
