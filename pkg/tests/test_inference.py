import numpy as np
import pytest
from scipy.stats import norm

from conftest import random_small_dataset
from sbps.data import Dataset, build_index
from sbps.inference import (bh_adjust, bootstrap_se, p_value, report_effects,
                            stratified_resample)
from sbps.pipeline import PipelineConfig


def straightforward_config(**kw):
    defaults = dict(method="sbps", criterion="smd", estimators=("direct",),
                    search="exhaustive")
    defaults.update(kw)
    return PipelineConfig(**defaults)


class TestStratifiedResample:
    def test_cell_sizes_preserved(self):
        rng = np.random.default_rng(0)
        ds = random_small_dataset(rng, R=3)
        index = build_index(ds)
        for _ in range(10):
            boot = stratified_resample(ds, index, rng)
            bindex = build_index(boot)  # also revalidates
            for r in range(1, ds.R + 1):
                assert bindex.n_treated(r) == index.n_treated(r)
                assert bindex.n_control(r) == index.n_control(r)

    def test_rows_come_from_the_right_cells(self):
        rng = np.random.default_rng(1)
        ds = random_small_dataset(rng, R=2, n_per_group=20, K=1)
        index = build_index(ds)
        boot = stratified_resample(ds, index, rng)
        source_rows = {(int(z), int(g), float(x)) for z, g, x
                       in zip(ds.z, ds.g, ds.x[:, 0])}
        for i in range(boot.n):
            assert (int(boot.z[i]), int(boot.g[i]), float(boot.x[i, 0])) \
                in source_rows


class TestBootstrapSe:
    def test_constant_outcomes_give_zero_se(self):
        rng = np.random.default_rng(2)
        ds = random_small_dataset(rng, R=2, n_per_group=16, K=1)
        ds = Dataset(z=ds.z, g=ds.g, x=ds.x, y=np.full(ds.n, 5.0), R=ds.R)
        res = bootstrap_se(ds, straightforward_config(), B=8, seed=3)
        np.testing.assert_allclose(res.se, 0.0, atol=1e-12)

    def test_singleton_cells_make_resamples_identical(self):
        # one treated and one control per subgroup: resampling is the
        # identity, so every replicate estimates the same effect
        ds = Dataset(z=np.array([1, 0, 1, 0]), g=np.array([1, 1, 2, 2]),
                     x=np.array([[0.1], [0.9], [0.4], [0.6]]),
                     y=np.array([4.0, 1.0, 3.0, 2.0]), R=2)
        config = straightforward_config(criterion="psw", estimators=("psw",))
        res = bootstrap_se(ds, config, B=2, seed=11)
        np.testing.assert_allclose(res.se, 0.0, atol=1e-12)
        assert np.all(res.n_undefined == 0)

    def test_determinism_and_worker_independence(self):
        rng = np.random.default_rng(4)
        ds = random_small_dataset(rng, R=2, n_per_group=14)
        config = straightforward_config()
        a = bootstrap_se(ds, config, B=6, seed=9)
        b = bootstrap_se(ds, config, B=6, seed=9)
        assert np.array_equal(a.taus, b.taus, equal_nan=True)
        c = bootstrap_se(ds, config, B=6, seed=9, workers=2)
        assert np.array_equal(a.taus, c.taus, equal_nan=True)

    def test_needs_two_replicates(self):
        rng = np.random.default_rng(5)
        ds = random_small_dataset(rng, R=2)
        with pytest.raises(ValueError, match="B >= 2"):
            bootstrap_se(ds, straightforward_config(), B=1, seed=0)

    @pytest.mark.slow
    def test_se_stabilizes_in_replicate_count(self):
        rng = np.random.default_rng(6)
        ds = random_small_dataset(rng, R=2, n_per_group=15, K=1)
        config = straightforward_config()
        small = bootstrap_se(ds, config, B=400, seed=21)
        large = bootstrap_se(ds, config, B=1600, seed=22)
        for r in range(ds.R):
            assert abs(small.se[r] - large.se[r]) < 0.25 * large.se[r]


class TestPValue:
    def test_zero_statistic_gives_one(self):
        assert p_value(0.0, 2.0) == pytest.approx(1.0, abs=1e-15)

    def test_1960_gives_five_percent(self):
        assert p_value(1.96, 1.0) == pytest.approx(0.05, abs=5e-4)

    def test_unit_statistic(self):
        assert p_value(3.0, 3.0) == pytest.approx(0.3173, abs=1e-4)
        assert p_value(3.0, 3.0) == pytest.approx(2 * (1 - norm.cdf(1.0)),
                                                  abs=1e-12)

    def test_zero_se_reports_zero(self):
        assert p_value(1.0, 0.0) == 0.0

    def test_invalid_se_rejected(self):
        with pytest.raises(ValueError):
            p_value(1.0, -0.5)
        with pytest.raises(ValueError):
            p_value(1.0, np.nan)

    def test_in_unit_interval(self):
        # |t| capped where the normal tail is still representable in floats
        rng = np.random.default_rng(7)
        for _ in range(100):
            t = rng.uniform(-35, 35)
            p = p_value(t, 1.0)
            assert 0.0 < p <= 1.0


def bh_oracle(p):
    """Textbook step-up rule, written independently of the implementation."""
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    adjusted = [None] * m
    running_min = 1.0
    for rank in range(m, 0, -1):
        i = order[rank - 1]
        running_min = min(running_min, p[i] * m / rank)
        adjusted[i] = running_min
    return np.array(adjusted)


class TestBhAdjust:
    def test_single_value_unchanged(self):
        np.testing.assert_allclose(bh_adjust(np.array([0.37])), [0.37])

    def test_equal_values_unchanged(self):
        np.testing.assert_allclose(bh_adjust(np.full(5, 0.2)),
                                   np.full(5, 0.2), atol=1e-15)

    def test_worked_example(self):
        p = np.array([0.01, 0.04, 0.03, 0.005])
        np.testing.assert_allclose(bh_adjust(p), [0.02, 0.04, 0.04, 0.02],
                                   atol=1e-12)

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(300):
            m = int(rng.integers(1, 12))
            p = rng.uniform(size=m)
            np.testing.assert_allclose(bh_adjust(p), bh_oracle(p), atol=1e-12)

    def test_matches_statsmodels(self):
        from statsmodels.stats.multitest import multipletests
        rng = np.random.default_rng(9)
        for _ in range(200):
            p = rng.uniform(size=int(rng.integers(1, 15)))
            expected = multipletests(p, method="fdr_bh")[1]
            np.testing.assert_allclose(bh_adjust(p), expected, atol=1e-12)

    def test_monotone_in_inputs(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            p = np.sort(rng.uniform(size=6))
            shrunk = p * rng.uniform(0.5, 1.0)
            assert np.all(bh_adjust(shrunk) <= bh_adjust(p) + 1e-12)

    def test_adjusted_bounded_by_input_and_one(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            p = rng.uniform(size=8)
            adj = bh_adjust(p)
            assert np.all(adj >= p - 1e-12)
            assert np.all(adj <= 1.0)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            bh_adjust(np.array([0.5, 1.2]))


@pytest.fixture(scope="module")
def report():
    rng = np.random.default_rng(12)
    ds = random_small_dataset(rng, R=3, n_per_group=18)
    return report_effects(ds, straightforward_config(), B=12, seed=77)


class TestReportEffects:

    def test_interval_construction(self, report):
        ok = np.isfinite(report.tau_hat) & np.isfinite(report.se_hat)
        np.testing.assert_allclose(
            report.ci_low[ok], report.tau_hat[ok] - 1.96 * report.se_hat[ok])
        np.testing.assert_allclose(
            report.ci_high[ok], report.tau_hat[ok] + 1.96 * report.se_hat[ok])

    def test_adjusted_at_least_raw(self, report):
        ok = np.isfinite(report.p_value)
        assert np.all(report.p_adjusted[ok] >= report.p_value[ok] - 1e-12)

    def test_adjustment_consistent_with_direct_call(self, report):
        ok = np.isfinite(report.p_value)
        np.testing.assert_allclose(report.p_adjusted[ok],
                                   bh_adjust(report.p_value[ok]), atol=1e-12)

    def test_metadata(self, report):
        assert report.B == 12
        assert report.estimator == "direct"
        assert report.criterion == "smd"
        assert len(report.scope) == 3

    def test_fixed_scope_mode_warns(self):
        rng = np.random.default_rng(13)
        ds = random_small_dataset(rng, R=2, n_per_group=14)
        config = straightforward_config(reoptimize_in_bootstrap=False)
        rep = report_effects(ds, config, B=6, seed=5)
        assert any("fixed scope" in w for w in rep.warnings)
