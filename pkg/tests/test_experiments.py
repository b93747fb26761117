import numpy as np
import pytest

from smoothmle import experiments as exps
from smoothmle.errors import ValidationError


def cfg(**kw):
    base = dict(dist="spiked_laplace", n_grid=(100,), r_grid=(0.05,), trials=20, seed=1)
    base.update(kw)
    return exps.ExperimentConfig(**base)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(trials=0), dict(n_grid=()), dict(r_grid=()),
                                    dict(r_grid=(0.1, 0.0)), dict(delta=1.0),
                                    dict(estimators=("mean", "lee_valiant"))])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            cfg(**kw)

    def test_default_grid(self):
        g = exps.default_r_grid()
        assert len(g) == 8 and g[0] == pytest.approx(1e-3) and g[-1] == pytest.approx(1.0)
        assert np.allclose(np.diff(np.log(g)), np.log(1000) / 7)


class TestHeatmap:
    def test_header_and_format(self, tmp_path):
        path = tmp_path / "h.csv"
        cells = exps.run_mse_heatmap(cfg(n_grid=(50, 80), r_grid=(0.01, 0.1),
                                         out_path=str(path)))
        lines = path.read_text().splitlines()
        assert lines[0] == "n,r,mse,mean_abs_err,q90,q95,trials,failures"
        assert len(lines) == 5 and len(cells) == 4
        for c in cells:
            assert c.mse >= 0 and c.quantile_err[0.9] <= c.quantile_err[0.95]

    def test_single_trial_deterministic(self):
        a = exps.write_heatmap_csv(exps.run_mse_heatmap(cfg(trials=1)))
        b = exps.write_heatmap_csv(exps.run_mse_heatmap(cfg(trials=1)))
        assert a == b

    def test_worker_count_irrelevant(self):
        a = exps.write_heatmap_csv(exps.run_mse_heatmap(cfg(trials=300, workers=1)))
        b = exps.write_heatmap_csv(exps.run_mse_heatmap(cfg(trials=300, workers=2)))
        assert a == b

    @pytest.mark.parametrize("r", [0.1, 0.5])
    def test_gaussian_mse(self, r):
        n = 200
        cells = exps.run_mse_heatmap(cfg(dist="gaussian", n_grid=(n,), r_grid=(r,),
                                         trials=600))
        assert cells[0].mse == pytest.approx((1 + r * r) / n, rel=0.2)

    def test_best_r(self):
        cells = [exps.CellResult(10, 0.1, 2.0, 0, {}, 1, 0),
                 exps.CellResult(10, 0.2, 1.0, 0, {}, 1, 0),
                 exps.CellResult(20, 0.1, 0.5, 0, {}, 1, 0)]
        assert exps.best_r_by_n(cells) == {10: 0.2, 20: 0.1}


class TestErrors:
    def test_paired_gaussian(self):
        res = exps.run_error_distribution(cfg(dist="gaussian", n_grid=(200,), trials=50,
                                              estimators=("mean", "unsmoothed_mle")))
        gap = np.abs(res["errors"]["mean"] - res["errors"]["unsmoothed_mle"])
        assert gap.max() <= 1.0 / 64 * 1.35

    def test_csv(self):
        res = exps.run_error_distribution(cfg(trials=3, estimators=("mean", "median")))
        text = exps.write_errors_csv(res["errors"])
        lines = text.splitlines()
        assert lines[0] == "estimator,trial,error" and len(lines) == 7
        assert lines[1].startswith("mean,0,")

    def test_failures_counted_not_raised(self):
        res = exps.run_error_distribution(cfg(dist="spiked_gaussian", trials=3,
                                              estimators=("unsmoothed_mle", "mean")))
        assert res["failures"]["unsmoothed_mle"] == 3
        assert np.isnan(res["errors"]["unsmoothed_mle"]).all()
        assert res["failures"]["mean"] == 0


class TestCoverage:
    def test_nesting_and_weak_target(self):
        res = exps.run_coverage(cfg(dist="gaussian", n_grid=(300,), delta=0.5, trials=200))
        cov = res["coverage"]
        assert cov[1.5] >= cov[1.2] >= cov[1.1] >= cov[1.0]
        assert cov[1.2] >= 0.5

    def test_csv(self):
        text = exps.write_coverage_csv({1.0: 0.5, 1.5: 0.75}, 4)
        assert text == "factor,coverage,trials\n1,0.5,4\n1.5,0.75,4\n"
