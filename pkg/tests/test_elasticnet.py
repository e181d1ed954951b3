import numpy as np
import pytest

from crimeflows import elasticnet
from crimeflows.errors import ConfigError


def toy_data(n=60, p=3, seed=0, noise=0.0, coef=(2.0, -1.0, 0.5)):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (n, p))
    y = X @ np.asarray(coef[:p]) + 1.5 + noise * rng.normal(0, 1, n)
    return X, y


class TestCoordinateDescent:
    def test_lambda_zero_is_ols_single_feature(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 2, (50, 1))
        y = 2.0 * X[:, 0]
        fit = elasticnet.fit_elastic_net(X, y, lambdas=[0.0], alphas=[1.0])
        assert fit.coefficients[0] == pytest.approx(2.0, abs=1e-6)

    def test_lambda_zero_matches_lstsq_multifeature(self):
        X, y = toy_data(noise=0.3, seed=4)
        fit = elasticnet.fit_elastic_net(X, y, lambdas=[0.0], alphas=[0.5])
        Xi = np.column_stack([np.ones(len(y)), X])
        ols = np.linalg.lstsq(Xi, y, rcond=None)[0]
        assert np.allclose(fit.coefficients, ols[1:], atol=1e-6)
        assert fit.intercept == pytest.approx(ols[0], abs=1e-6)

    def test_huge_lambda_shrinks_to_mean(self):
        X, y = toy_data(noise=0.1, seed=5)
        fit = elasticnet.fit_elastic_net(X, y, lambdas=[1e9], alphas=[1.0])
        assert np.all(fit.coefficients == 0.0)
        assert np.allclose(fit.predict(X), y.mean())

    def test_matches_subgradient_descent_oracle(self):
        # independent solver: plain subgradient descent on the same objective
        rng = np.random.default_rng(6)
        n, p = 200, 3
        X = rng.normal(0, 1, (n, p))
        y = X @ np.array([1.2, -0.8, 0.6]) + 0.05 * rng.normal(0, 1, n)
        lam, alpha = 0.1, 1.0
        fit = elasticnet.fit_elastic_net(X, y, lambdas=[lam], alphas=[alpha])

        Xs = (X - X.mean(axis=0)) / X.std(axis=0)
        yc = y - y.mean()
        G = Xs.T @ Xs / n
        b = Xs.T @ yc / n
        mu = float(np.linalg.eigvalsh(G).min())  # strong convexity of the data term
        coef = np.zeros(p)
        for k in range(1, 400_000):
            grad = G @ coef - b + lam * alpha * np.sign(coef) \
                + lam * (1 - alpha) * coef
            coef -= (2.0 / (mu * (k + 1))) * grad
        assert np.allclose(fit.coef_std, coef, atol=1e-4)

    def test_zero_variance_feature_ignored(self):
        X, y = toy_data(seed=7, noise=0.2)
        X = np.column_stack([X, np.full(len(y), 3.0)])
        fit = elasticnet.fit_elastic_net(X, y, lambdas=[0.01], alphas=[0.5])
        assert fit.coefficients[-1] == 0.0


class TestCrossValidation:
    def test_cv_selects_reasonable_lambda(self):
        X, y = toy_data(n=200, noise=0.5, seed=8)
        fit = elasticnet.fit_elastic_net(
            X, y, lambdas=[1e-4, 1e-2, 1e2], alphas=[0.5], folds=5, seed=1)
        assert fit.lam < 1e2  # huge shrinkage must lose on CV error
        assert len(fit.cv_table) == 3

    def test_tie_prefers_smaller_lambda_then_alpha(self):
        # constant feature: every grid point predicts the fold mean, an exact tie
        X = np.full((20, 1), 3.0)
        y = np.arange(20, dtype=float)
        fit = elasticnet.fit_elastic_net(
            X, y, lambdas=[0.5, 0.1], alphas=[1.0, 0.25], folds=2, seed=0)
        assert (fit.lam, fit.alpha) == (0.1, 0.25)

    def test_deterministic_given_seed(self):
        X, y = toy_data(n=100, noise=0.4, seed=9)
        a = elasticnet.fit_elastic_net(X, y, lambdas=[0.01, 0.1], alphas=[0.5], seed=3)
        b = elasticnet.fit_elastic_net(X, y, lambdas=[0.01, 0.1], alphas=[0.5], seed=3)
        assert np.array_equal(a.coef_std, b.coef_std)
        assert a.lam == b.lam and a.alpha == b.alpha

    def test_too_few_rows_rejected(self):
        X, y = toy_data(n=8)
        with pytest.raises(ConfigError):
            elasticnet.fit_elastic_net(X, y, lambdas=[0.1, 1.0], alphas=[0.5], folds=5)

    def test_degenerate_fold_skipped_with_warning(self, caplog):
        # response varies only on the rows of the first fold: that fold's
        # training complement is constant, so it is skipped; the rest run
        from crimeflows.selection import make_folds

        n, folds, seed = 30, 3, 4
        fold_idx = make_folds(n, folds, seed)
        rng = np.random.default_rng(2)
        X = rng.normal(0, 1, (n, 2))
        y = np.zeros(n)
        y[fold_idx[0]] = rng.normal(0, 1, len(fold_idx[0]))
        fit = elasticnet.fit_elastic_net(X, y, lambdas=[0.1, 0.01], alphas=[1.0],
                                         folds=folds, seed=seed)
        assert "degenerate" in caplog.text
        assert all(row["folds_used"] == folds - 1 for row in fit.cv_table)

    def test_standardization_reused_at_predict_time(self):
        X, y = toy_data(n=100, noise=0.2, seed=10)
        fit = elasticnet.fit_elastic_net(X, y, lambdas=[0.01], alphas=[0.5])
        shifted = X + 100.0  # predictions must use the training-time means
        assert not np.allclose(fit.predict(shifted), fit.predict(X))
