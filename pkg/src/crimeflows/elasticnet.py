"""Elastic net regression by cyclic coordinate descent.

Objective, on training-standardized features and a centered response:

    (1/2n) ||y - X b||^2 + lam * (alpha ||b||_1 + (1 - alpha)/2 ||b||_2^2)

Standardization parameters are stored on the fit and reused at
prediction time. lam = 0 reduces to ordinary least squares.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .selection import cv_select, make_folds

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(float(x) for x in np.logspace(-4, 2, 13))
DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)

CD_TOL = 1e-7
CD_MAX_CYCLES = 100_000


def _soft_threshold(x: float, thresh: float) -> float:
    if x > thresh:
        return x - thresh
    if x < -thresh:
        return x + thresh
    return 0.0


def _standardize(X: np.ndarray):
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    return (X - means) / stds, means, stds


def coordinate_descent(Xs: np.ndarray, yc: np.ndarray, lam: float, alpha: float,
                       tol: float = CD_TOL, max_cycles: int = CD_MAX_CYCLES,
                       coef0: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Cyclic coordinate descent on standardized features and centered response."""
    n, p = Xs.shape
    coef = np.zeros(p) if coef0 is None else coef0.copy()
    resid = yc - Xs @ coef
    col_ms = (Xs * Xs).mean(axis=0)  # ~1 for standardized, 0 for empty columns
    denom = col_ms + lam * (1.0 - alpha)
    thresh = lam * alpha
    cycles = 0
    for cycles in range(1, max_cycles + 1):
        max_delta = 0.0
        for j in range(p):
            if denom[j] == 0.0:
                continue
            old = coef[j]
            rho = Xs[:, j] @ resid / n + col_ms[j] * old
            new = _soft_threshold(rho, thresh) / denom[j]
            if new != old:
                resid += Xs[:, j] * (old - new)
                coef[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta < tol:
            break
    else:
        log.warning("coordinate descent hit max_cycles=%d", max_cycles)
    return coef, cycles


@dataclass
class ElasticNetFit:
    """Fitted elastic net with the standardization frozen at training time."""

    lam: float
    alpha: float
    coef_std: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    y_mean: float
    feature_names: list[str] = field(default_factory=list)
    n_cycles: int = 0
    cv_table: list[dict] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xs = (np.asarray(X, dtype=np.float64) - self.feature_means) / self.feature_stds
        return self.y_mean + Xs @ self.coef_std

    @property
    def coefficients(self) -> np.ndarray:
        """Coefficients on the raw feature scale."""
        return self.coef_std / self.feature_stds

    @property
    def intercept(self) -> float:
        return float(self.y_mean - self.coefficients @ self.feature_means)

    def hyperparameters(self) -> dict:
        return {"lambda": self.lam, "alpha": self.alpha}


def _fit_one(X: np.ndarray, y: np.ndarray, lam: float, alpha: float,
             tol: float, names) -> ElasticNetFit:
    Xs, means, stds = _standardize(X)
    y_mean = float(y.mean())
    coef, cycles = coordinate_descent(Xs, y - y_mean, lam, alpha, tol=tol)
    return ElasticNetFit(
        lam=lam, alpha=alpha, coef_std=coef, feature_means=means,
        feature_stds=stds, y_mean=y_mean,
        feature_names=list(names) if names is not None else [],
        n_cycles=cycles,
    )


def fit_elastic_net(X: np.ndarray, y: np.ndarray,
                    lambdas=DEFAULT_LAMBDAS, alphas=DEFAULT_ALPHAS,
                    folds: int = 5, seed=0, tol: float = CD_TOL,
                    feature_names=None) -> ElasticNetFit:
    """Grid-search (lambda, alpha) by K-fold CV, then refit on all rows.

    CV picks the lowest mean MSE; ties prefer the smaller lambda, then
    the smaller alpha. Folds with a constant response are skipped with a
    warning. A single-point grid skips CV outright.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ConfigError("X must be 2-d with one row per response value")
    grid = [(float(l), float(a)) for l in lambdas for a in alphas]
    if not grid:
        raise ConfigError("empty elastic net grid")
    if len(grid) == 1:
        best_lam, best_alpha = grid[0]
        fit = _fit_one(X, y, best_lam, best_alpha, tol, feature_names)
        fit.cv_table = [{"params": grid[0], "cv_mse": float("nan"), "folds_used": 0}]
        return fit

    fold_idx = make_folds(len(y), folds, seed)
    all_rows = np.arange(len(y))
    split_cache = []
    for hold in fold_idx:
        train = np.setdiff1d(all_rows, hold, assume_unique=True)
        if np.ptp(y[train]) == 0.0:
            log.warning("skipping degenerate CV fold with constant response")
            split_cache.append(None)
            continue
        Xs, means, stds = _standardize(X[train])
        split_cache.append((train, hold, Xs, means, stds))

    def fold_mse(i):
        lam, alpha = grid[i]
        errs = []
        for entry in split_cache:
            if entry is None:
                continue
            train, hold, Xs, means, stds = entry
            y_mean = y[train].mean()
            coef, _ = coordinate_descent(Xs, y[train] - y_mean, lam, alpha, tol=tol)
            pred = y_mean + ((X[hold] - means) / stds) @ coef
            errs.append(float(np.mean((pred - y[hold]) ** 2)))
        return errs

    best, table = cv_select(grid, fold_mse, tie_key=lambda g: (g[0], g[1]))
    best_lam, best_alpha = grid[best]
    fit = _fit_one(X, y, best_lam, best_alpha, tol, feature_names)
    fit.cv_table = table
    return fit
