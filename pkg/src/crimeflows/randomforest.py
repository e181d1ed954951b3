"""Seeded random forest regression.

Trees are grown on bootstrap samples with variance-reduction splits;
the feature subset for each split is drawn from the tree's own
generator, so the whole forest is a pure function of (data, seed) and
per-tree work can run on any thread count without changing results.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .parallel import parallel_map
from .selection import cv_select, make_folds

log = logging.getLogger(__name__)

DEFAULT_TREES = (100, 300)
DEFAULT_DEPTHS = (8, 16, None)
DEFAULT_MAX_FEATURES = ("all", "sqrt", "third")

_NO_FEATURE = -1


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def resolve_max_features(token, p: int) -> int:
    if token in ("all", None):
        return p
    if token == "sqrt":
        return max(1, int(np.sqrt(p)))
    if token == "third":
        return max(1, p // 3)
    m = int(token)
    if not 1 <= m <= p:
        raise ConfigError(f"max_features {token!r} outside 1..{p}")
    return m


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != _NO_FEATURE
        while active.any():
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active[rows] = self.feature[node[rows]] != _NO_FEATURE
        return self.value[node]


def _best_split(x: np.ndarray, y: np.ndarray):
    """Lowest-SSE split of one feature, or None if the feature is constant."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if xs[0] == xs[-1]:
        return None
    ys = y[order]
    cum = np.cumsum(ys)
    cum2 = np.cumsum(ys * ys)
    tot, tot2 = cum[-1], cum2[-1]
    n = len(ys)
    valid = np.nonzero(xs[:-1] < xs[1:])[0]
    nl = valid + 1.0
    nr = n - nl
    sse = (cum2[valid] - cum[valid] ** 2 / nl) + \
          ((tot2 - cum2[valid]) - (tot - cum[valid]) ** 2 / nr)
    k = int(np.argmin(sse))
    pos = valid[k]
    return float(sse[k]), float((xs[pos] + xs[pos + 1]) / 2.0)


def _grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
               max_depth: int | None, max_features: int) -> _Tree:
    n, p = X.shape
    boot = rng.integers(0, n, size=n)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node():
        feature.append(_NO_FEATURE)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, boot, 0)]
    while stack:
        slot, idx, depth = stack.pop()
        ynode = y[idx]
        value[slot] = float(ynode.mean())
        if len(idx) < 2 or np.ptp(ynode) == 0.0 or \
                (max_depth is not None and depth >= max_depth):
            continue
        feats = rng.choice(p, size=max_features, replace=False)
        best = None
        for f in feats:
            split = _best_split(X[idx, f], ynode)
            if split is not None and (best is None or split[0] < best[0]):
                best = (split[0], int(f), split[1])
        if best is None:
            continue  # all sampled features constant on this node
        _, f, thr = best
        go_left = X[idx, f] <= thr
        feature[slot] = f
        threshold[slot] = thr
        l_slot, r_slot = new_node(), new_node()
        left[slot] = l_slot
        right[slot] = r_slot
        # right first so the left child is processed (and numbered) in order
        stack.append((r_slot, idx[~go_left], depth + 1))
        stack.append((l_slot, idx[go_left], depth + 1))
    return _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
    )


@dataclass
class RandomForestFit:
    """Fitted forest plus the hyperparameters that produced it."""

    trees: list[_Tree]
    n_trees: int
    max_depth: int | None
    max_features_token: object
    seed: object
    feature_names: list[str] = field(default_factory=list)
    cv_table: list[dict] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        total = np.zeros(len(X))
        for tree in self.trees:  # fixed order keeps the sum deterministic
            total += tree.predict(X)
        return total / len(self.trees)

    def hyperparameters(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "max_features": self.max_features_token,
        }


def _fit_forest(X, y, n_trees, max_depth, mf_token, seed, threads=1,
                feature_names=None) -> RandomForestFit:
    p = X.shape[1]
    m = resolve_max_features(mf_token, p)
    children = np.random.SeedSequence(seed).spawn(n_trees)

    def grow(child):
        return _grow_tree(X, y, np.random.default_rng(child), max_depth, m)

    trees = parallel_map(grow, children, threads)
    return RandomForestFit(
        trees=trees, n_trees=n_trees, max_depth=max_depth,
        max_features_token=mf_token, seed=seed,
        feature_names=list(feature_names) if feature_names is not None else [],
    )


def fit_random_forest(X: np.ndarray, y: np.ndarray,
                      trees_grid=DEFAULT_TREES, depth_grid=DEFAULT_DEPTHS,
                      max_features_grid=DEFAULT_MAX_FEATURES,
                      folds: int = 5, seed=0, threads: int = 1,
                      feature_names=None) -> RandomForestFit:
    """Grid-search forest hyperparameters by K-fold CV, then refit on all rows.

    Ties keep the first grid point in (trees, depth, max_features)
    declaration order. A single-point grid skips CV outright.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    base = _seed_tuple(seed)
    grid = [(int(t), d if d is None else int(d), mf)
            for t in trees_grid for d in depth_grid for mf in max_features_grid]
    if not grid:
        raise ConfigError("empty random forest grid")
    if len(grid) == 1:
        t, d, mf = grid[0]
        fit = _fit_forest(X, y, t, d, mf, base + (0,), threads, feature_names)
        fit.cv_table = [{"params": grid[0], "cv_mse": float("nan"), "folds_used": 0}]
        return fit

    fold_idx = make_folds(len(y), folds, base)
    all_rows = np.arange(len(y))

    def fold_mse(i):
        t, d, mf = grid[i]
        errs = []
        for k, hold in enumerate(fold_idx):
            train = np.setdiff1d(all_rows, hold, assume_unique=True)
            if np.ptp(y[train]) == 0.0:
                log.warning("skipping degenerate CV fold with constant response")
                continue
            fit = _fit_forest(X[train], y[train], t, d, mf, base + (1 + i, k), threads)
            pred = fit.predict(X[hold])
            errs.append(float(np.mean((pred - y[hold]) ** 2)))
        return errs

    best, table = cv_select(grid, fold_mse, tie_key=lambda g: ())
    t, d, mf = grid[best]
    fit = _fit_forest(X, y, t, d, mf, base + (0,), threads, feature_names)
    fit.cv_table = table
    return fit
