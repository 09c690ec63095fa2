import numpy as np
import pytest
from scipy.special import expit, logit

from sbps.logistic import (DesignMatrix, RankDeficientDesignError,
                           SingleClassError, fit, log_likelihood, predict,
                           score)


def design(matrix, labels=None):
    matrix = np.asarray(matrix, dtype=float)
    if labels is None:
        labels = [f"c{j}" for j in range(matrix.shape[1])]
    return DesignMatrix(matrix, labels)


class TestFit:
    def test_symmetric_data_gives_zero_coefficients(self):
        d = design([[1, 0], [1, 0], [1, 1], [1, 1]], ["intercept", "x"])
        z = np.array([0, 1, 0, 1])
        coef = fit(d, z)
        assert coef.converged
        np.testing.assert_allclose(coef.beta, [0.0, 0.0], atol=1e-10)

    def test_intercept_only_recovers_logit_of_proportion(self):
        d = design(np.ones((100, 1)), ["intercept"])
        z = np.zeros(100)
        z[:30] = 1
        coef = fit(d, z)
        assert coef.converged
        assert coef.beta[0] == pytest.approx(logit(0.3), abs=1e-8)
        assert coef.beta[0] == pytest.approx(-0.8473, abs=1e-4)

    def test_single_class_rejected(self):
        d = design(np.ones((10, 1)))
        with pytest.raises(SingleClassError):
            fit(d, np.ones(10))

    def test_rank_deficient_design_names_columns(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(50, 2))
        mat = np.column_stack([np.ones(50), x, x[:, 0] * 2.0])
        d = design(mat, ["intercept", "a", "b", "a_doubled"])
        z = rng.integers(0, 2, size=50)
        z[0], z[1] = 0, 1
        with pytest.raises(RankDeficientDesignError) as err:
            fit(d, z)
        assert {"a", "a_doubled"} & set(err.value.columns)

    def test_coefficient_recovery_large_sample(self):
        # Oracle: the generating coefficient vector itself; the fit must
        # land within 3 standard errors of it (N = 20,000).
        from sbps.propensity import overall_design
        from sbps.simulation import Sim1Config, generate_sim1

        config = Sim1Config(R=20, n_per_group=1000)
        data = generate_sim1(config, 0, seed=2024)
        ds = data.dataset
        d = overall_design(ds, config.analysis_terms("correct"))
        coef = fit(d, ds.z)
        assert coef.converged

        truth = np.concatenate([config.delta_values(), np.asarray(config.alpha)])
        p = predict(d, coef)
        w = p * (1 - p)
        cov = np.linalg.inv(d.matrix.T @ (d.matrix * w[:, None]))
        se = np.sqrt(np.diag(cov))
        assert np.all(np.abs(coef.beta - truth) <= 3 * se)

    def test_score_equation_residual(self):
        rng = np.random.default_rng(7)
        n = 500
        x = rng.normal(size=(n, 3))
        d = design(np.column_stack([np.ones(n), x]))
        z = rng.integers(0, 2, size=n).astype(float)
        coef = fit(d, z)
        assert coef.converged
        residual = d.matrix.T @ (z - predict(d, coef))
        assert np.max(np.abs(residual)) / n <= 1e-6

    def test_separation_with_unit_margin_terminates(self):
        # x perfectly predicts z but the score tolerance is reached before
        # probabilities touch the working boundary: no flag, no crash
        x = np.concatenate([-np.ones(10), np.ones(10)])
        d = design(np.column_stack([np.ones(20), x]))
        z = (x > 0).astype(float)
        coef = fit(d, z)
        assert coef.converged
        p = predict(d, coef)
        assert np.all(p > 0) and np.all(p < 1)

    def test_separation_reaching_boundary_is_flagged(self):
        # huge covariate scale drives fitted probabilities within 1e-12
        # of the boundary, which must set the quasi-separation flag
        x = np.concatenate([-np.full(10, 1000.0), np.full(10, 1000.0)])
        d = design(np.column_stack([np.ones(20), x]))
        z = (x > 0).astype(float)
        coef = fit(d, z)
        assert coef.quasi_separated
        p = predict(d, coef)
        assert np.all(p >= 1e-12) and np.all(p <= 1 - 1e-12)


class TestPredict:
    def test_zero_row_with_zero_intercept_gives_half(self):
        d = design([[1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
        z = np.array([0, 1, 0, 1])
        coef = fit(d, z)
        p = predict(design([[0.0, 0.0]]), coef)
        assert p[0] == pytest.approx(0.5, abs=1e-12)

    def test_extreme_linear_predictor_clamped(self):
        d = design([[1.0], [1.0]])
        coef = fit(design([[1.0]] * 10),
                   np.array([0, 1] * 5))
        coef.beta[:] = 40.0
        p = predict(d, coef)
        assert np.all(p == 1.0 - 1e-12)

    def test_mean_prediction_matches_treated_fraction(self):
        rng = np.random.default_rng(11)
        n = 300
        x = rng.normal(size=(n, 2))
        d = design(np.column_stack([np.ones(n), x]))
        z = (rng.uniform(size=n) < expit(0.3 + x[:, 0])).astype(float)
        coef = fit(d, z)
        assert coef.converged
        assert predict(d, coef).mean() == pytest.approx(z.mean(), abs=1e-8)

    def test_dimension_mismatch(self):
        d10 = design(np.ones((10, 1)))
        z = np.array([0, 1] * 5)
        coef = fit(d10, z)
        with pytest.raises(ValueError, match="columns"):
            predict(design(np.column_stack([np.ones(4), np.arange(4) + 1.0])),
                    coef)


class TestGradient:
    def test_analytic_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            n, p = 40, 3
            d = design(np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))]))
            z = rng.integers(0, 2, size=n).astype(float)
            z[0], z[1] = 0, 1
            beta = rng.normal(scale=0.5, size=p)
            g = score(d, z, beta)
            h = 1e-5
            for j in range(p):
                e = np.zeros(p)
                e[j] = h
                fd = (log_likelihood(d, z, beta + e)
                      - log_likelihood(d, z, beta - e)) / (2 * h)
                assert abs(g[j] - fd) <= 1e-4 * max(1.0, abs(g[j]))


class TestInvariance:
    def test_covariate_rescaling(self):
        rng = np.random.default_rng(13)
        n = 200
        x = rng.normal(size=(n, 2))
        z = (rng.uniform(size=n) < expit(x[:, 0] - 0.5 * x[:, 1])).astype(float)
        d1 = design(np.column_stack([np.ones(n), x]))
        scaled = x.copy()
        scaled[:, 0] *= 7.5
        d2 = design(np.column_stack([np.ones(n), scaled]))
        c1 = fit(d1, z)
        c2 = fit(d2, z)
        assert c2.beta[1] * 7.5 == pytest.approx(c1.beta[1], rel=1e-6)
        np.testing.assert_allclose(predict(d1, c1), predict(d2, c2), atol=1e-8)


class TestDesignMatrix:
    def test_all_zero_column_rejected_at_fit(self):
        d = design(np.column_stack([np.ones(6), np.zeros(6)]), ["one", "dead"])
        with pytest.raises(RankDeficientDesignError) as err:
            fit(d, np.array([0, 1, 0, 1, 0, 1]))
        assert "dead" in err.value.columns

    def test_more_columns_than_rows_rejected_at_fit(self):
        d = design(np.ones((2, 3)) + np.arange(3))
        with pytest.raises(ValueError, match="columns"):
            fit(d, np.array([0, 1]))

    def test_label_count_must_match(self):
        with pytest.raises(ValueError, match="label"):
            DesignMatrix(np.ones((3, 2)), ["only-one"])
