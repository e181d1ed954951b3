import numpy as np
import pytest

from crimeflows import randomforest as rf
from crimeflows.errors import ConfigError


def friedman_like(n=300, seed=0, noise=0.2):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 5))
    y = 10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2 \
        + 10 * X[:, 3] + noise * rng.normal(0, 1, n)
    return X, y


class TestSingleTree:
    def test_constant_response_predicts_constant(self):
        rng = np.random.default_rng(1)
        X = rng.normal(0, 1, (50, 3))
        y = np.full(50, 4.5)
        fit = rf.fit_random_forest(X, y, trees_grid=[5], depth_grid=[4],
                                   max_features_grid=["all"], seed=0)
        assert np.allclose(fit.predict(X), 4.5)

    def test_depth_zero_stump_predicts_bootstrap_mean(self):
        rng = np.random.default_rng(2)
        X = rng.normal(0, 1, (40, 2))
        y = rng.normal(10, 2, 40)
        fit = rf.fit_random_forest(X, y, trees_grid=[1], depth_grid=[0],
                                   max_features_grid=["all"], seed=3)
        pred = fit.predict(X)
        assert np.ptp(pred) == 0.0  # single leaf
        boot = np.random.default_rng(np.random.SeedSequence((3, 0)).spawn(1)[0]) \
            .integers(0, 40, size=40)
        assert pred[0] == pytest.approx(y[boot].mean())

    def test_predictions_within_training_range(self):
        X, y = friedman_like(seed=4)
        fit = rf.fit_random_forest(X, y, trees_grid=[20], depth_grid=[None],
                                   max_features_grid=["sqrt"], seed=1)
        pred = fit.predict(X + 5.0)  # even far outside the training support
        assert pred.min() >= y.min() and pred.max() <= y.max()

    def test_learns_signal(self):
        X, y = friedman_like(n=500, seed=5, noise=0.1)
        fit = rf.fit_random_forest(X, y, trees_grid=[50], depth_grid=[None],
                                   max_features_grid=["all"], seed=2)
        resid = y - fit.predict(X)
        assert np.mean(resid ** 2) < 0.25 * np.var(y)


class TestDeterminism:
    def test_same_seed_same_predictions(self):
        X, y = friedman_like(seed=6)
        kw = dict(trees_grid=[10], depth_grid=[6], max_features_grid=["sqrt"], seed=9)
        a = rf.fit_random_forest(X, y, **kw)
        b = rf.fit_random_forest(X, y, **kw)
        assert np.array_equal(a.predict(X), b.predict(X))

    def test_thread_count_invariant(self):
        X, y = friedman_like(seed=7)
        kw = dict(trees_grid=[12], depth_grid=[6], max_features_grid=["third"], seed=4)
        a = rf.fit_random_forest(X, y, threads=1, **kw)
        b = rf.fit_random_forest(X, y, threads=4, **kw)
        assert np.array_equal(a.predict(X), b.predict(X))

    def test_different_seeds_differ(self):
        X, y = friedman_like(seed=8)
        a = rf.fit_random_forest(X, y, trees_grid=[5], depth_grid=[4],
                                 max_features_grid=["sqrt"], seed=1)
        b = rf.fit_random_forest(X, y, trees_grid=[5], depth_grid=[4],
                                 max_features_grid=["sqrt"], seed=2)
        assert not np.array_equal(a.predict(X), b.predict(X))


class TestGridSearch:
    def test_cv_runs_and_selects(self):
        X, y = friedman_like(n=200, seed=9)
        fit = rf.fit_random_forest(X, y, trees_grid=[10], depth_grid=[2, None],
                                   max_features_grid=["all"], folds=3, seed=5)
        assert len(fit.cv_table) == 2
        assert fit.max_depth is None  # depth 2 underfits this signal

    def test_resolve_max_features(self):
        assert rf.resolve_max_features("all", 9) == 9
        assert rf.resolve_max_features("sqrt", 9) == 3
        assert rf.resolve_max_features("third", 9) == 3
        assert rf.resolve_max_features(2, 9) == 2
        with pytest.raises(ConfigError):
            rf.resolve_max_features(0, 9)

    def test_empty_grid_rejected(self):
        X, y = friedman_like(n=50, seed=10)
        with pytest.raises(ConfigError):
            rf.fit_random_forest(X, y, trees_grid=[], depth_grid=[4],
                                 max_features_grid=["all"])
