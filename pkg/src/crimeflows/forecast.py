"""Out-of-sample crime forecasting and model comparison.

Models are trained on one year's panel and scored on the next. The
historical profile (predict last year's count for the same tract and
hour) is the benchmark; random forest and elastic net run over the four
mobility-feature variants, with Wilcoxon signed-rank tests on paired
per-observation squared errors for the pass-through comparisons.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from .elasticnet import DEFAULT_ALPHAS, DEFAULT_LAMBDAS, fit_elastic_net
from .errors import ConfigError, ValidationError
from .panel import COVARIATE_COLUMNS, Panel
from .randomforest import (
    DEFAULT_DEPTHS,
    DEFAULT_MAX_FEATURES,
    DEFAULT_TREES,
    fit_random_forest,
)

log = logging.getLogger(__name__)

MOBILITY_VARIANTS = {
    "1a": ("checkins",),
    "1b": ("checkins", "passthrough_flow"),
    "2a": ("inout_flow", "selfloop_flow"),
    "2b": ("inout_flow", "selfloop_flow", "passthrough_flow"),
}
WILCOXON_PAIRS = (("1b", "1a"), ("2b", "2a"))
SPACETIME_FEATURES = ("x", "y", "t", "weekend")
EXACT_WILCOXON_MAX_N = 25


def feature_columns(variant: str, covariates: bool = False) -> list[str]:
    if variant not in MOBILITY_VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    cols = ["past_crime", *MOBILITY_VARIANTS[variant], *SPACETIME_FEATURES]
    if covariates:
        cols += list(COVARIATE_COLUMNS)
    return cols


def feature_matrix(frame: pd.DataFrame, variant: str,
                   covariates: bool = False) -> tuple[np.ndarray, list[str]]:
    """Predictor matrix for one variant; evaluation-year crime never enters."""
    cols = feature_columns(variant, covariates)
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise ValidationError(f"panel lacks feature columns {missing}")
    return frame[cols].to_numpy(dtype=np.float64), cols


def historical_baseline(panel_eval: Panel) -> np.ndarray:
    """Predict last year's count at the same (tract, hour)."""
    return panel_eval.frame["past_crime"].to_numpy(dtype=np.float64)


@dataclass
class Metrics:
    mse: float
    mae: float
    r2: float  # nan when the actual series has zero variance

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "r2": None if math.isnan(self.r2) else self.r2,
        }


def evaluate(predictions: np.ndarray, actual: np.ndarray) -> Metrics:
    predictions = np.asarray(predictions, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predictions.shape != actual.shape or len(actual) == 0:
        raise ValidationError("predictions and actuals must be equal-length and non-empty")
    err = predictions - actual
    mse = float(np.mean(err ** 2))
    mae = float(np.mean(np.abs(err)))
    sst = float(np.sum((actual - actual.mean()) ** 2))
    r2 = float("nan") if sst == 0.0 else 1.0 - float(np.sum(err ** 2)) / sst
    return Metrics(mse=mse, mae=mae, r2=r2)


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_effective": self.n_effective,
            "method": self.method,
            "degenerate": self.degenerate,
        }


def _signed_ranks(diff: np.ndarray) -> np.ndarray:
    """Average ranks of |diff| (ties share the mean rank)."""
    a = np.abs(diff)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a), dtype=np.float64)
    sorted_a = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_p_le(ranks: np.ndarray, w_obs: float) -> float:
    """P(W <= w_obs) for W = sum of a uniformly random subset of the ranks.

    Doubling the (possibly half-integer) average ranks makes them
    integers, so the distribution is a dense convolution; this equals
    full enumeration of all 2^n sign assignments.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    total = 0
    for r in doubled:
        counts[r:total + r + 1] += counts[0:total + 1]
        total += r
    target = int(math.floor(2.0 * w_obs + 1e-9))
    return float(counts[: target + 1].sum() / 2.0 ** len(ranks))


def wilcoxon_signed_rank(errors_a: np.ndarray, errors_b: np.ndarray) -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped and tied |differences| share average
    ranks. Up to 25 effective pairs the p-value is exact (equivalent to
    enumerating every sign assignment); above that it uses the normal
    approximation with tie-corrected variance and continuity correction.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("paired samples must have equal length")
    diff = a - b
    diff = diff[diff != 0.0]
    n = len(diff)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_effective=0,
                              method="degenerate", degenerate=True)
    ranks = _signed_ranks(diff)
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_WILCOXON_MAX_N:
        p = min(1.0, 2.0 * _exact_p_le(ranks, w))
        return WilcoxonResult(statistic=w, p_value=p, n_effective=n, method="exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        return WilcoxonResult(statistic=w, p_value=1.0, n_effective=n,
                              method="normal", degenerate=True)
    z = (w - mean + 0.5) / math.sqrt(var)  # continuity correction toward the mean
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return WilcoxonResult(statistic=w, p_value=p, n_effective=n, method="normal")


def crimes_gained(mae_base: float, mae_model: float, n_tracts: int,
                  n_hours: int = 168) -> int:
    """Yearly crimes additionally predicted, from the MAE improvement.

    Half the improvement is credited, since MAE alone cannot say whether
    a model under- or over-predicted. Negative values (model worse) are
    reported signed.
    """
    if mae_base < 0 or mae_model < 0:
        raise ValidationError("MAE values must be non-negative")
    x = n_hours * n_tracts * (mae_base - mae_model) / 2.0
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass
class ForecastConfig:
    """Hyperparameter grids and run controls for the prediction suite."""

    en_lambdas: tuple = DEFAULT_LAMBDAS
    en_alphas: tuple = DEFAULT_ALPHAS
    rf_trees: tuple = DEFAULT_TREES
    rf_depths: tuple = DEFAULT_DEPTHS
    rf_max_features: tuple = DEFAULT_MAX_FEATURES
    folds: int = 5
    seed: int = 0
    variants: tuple = ("1a", "1b", "2a", "2b")
    covariates: bool = False
    threads: int = 1

    def to_dict(self) -> dict:
        return {
            "en_lambdas": list(self.en_lambdas),
            "en_alphas": list(self.en_alphas),
            "rf_trees": list(self.rf_trees),
            "rf_depths": list(self.rf_depths),
            "rf_max_features": list(self.rf_max_features),
            "folds": self.folds,
            "seed": self.seed,
            "variants": list(self.variants),
            "covariates": self.covariates,
        }


@dataclass
class EvalReport:
    """Table-shaped comparison of every model against the historical profile."""

    historical: Metrics
    models: dict  # kind -> variant -> {metrics, improvement_pct, ...}
    wilcoxon: dict  # kind -> "1b_vs_1a" -> WilcoxonResult dict
    n_tracts: int
    train_year: int
    eval_year: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "historical": self.historical.to_dict(),
            "models": self.models,
            "wilcoxon": self.wilcoxon,
            "n_tracts": self.n_tracts,
            "train_year": self.train_year,
            "eval_year": self.eval_year,
            "config": self.config,
        }

    def table(self) -> pd.DataFrame:
        rows = [{
            "model": "historical", "predictors": "-",
            "mse": self.historical.mse, "improvement_pct": 0.0,
            "mae": self.historical.mae, "r2": self.historical.r2,
            "wilcoxon_p": float("nan"),
        }]
        for kind in sorted(self.models):
            for variant in sorted(self.models[kind]):
                entry = self.models[kind][variant]
                pair = next((f"{a}_vs_{b}" for a, b in WILCOXON_PAIRS if a == variant), None)
                wp = self.wilcoxon.get(kind, {}).get(pair, {}).get("p_value") \
                    if pair else None
                rows.append({
                    "model": f"{kind.upper()} ({variant})",
                    "predictors": ", ".join(entry["predictors"]),
                    "mse": entry["mse"],
                    "improvement_pct": entry["improvement_pct"],
                    "mae": entry["mae"],
                    "r2": entry["r2"] if entry["r2"] is not None else float("nan"),
                    "wilcoxon_p": wp if wp is not None else float("nan"),
                })
        return pd.DataFrame(rows)


def improvement_pct(mse_hist: float, mse_model: float) -> float:
    return (mse_hist - mse_model) / mse_hist * 100.0


def prediction_suite(panel_train: Panel, panel_eval: Panel,
                     config: ForecastConfig | None = None) -> EvalReport:
    """Train RF and EN per variant on the train year, score on the eval year."""
    config = config or ForecastConfig()
    train = panel_train.frame.sort_values(["tract_id", "t"], kind="stable")
    eval_f = panel_eval.frame.sort_values(["tract_id", "t"], kind="stable")
    if sorted(train["tract_id"].unique()) != sorted(eval_f["tract_id"].unique()):
        raise ValidationError("train and eval panels cover different tract sets")

    y_train = train["crime"].to_numpy(dtype=np.float64)
    y_eval = eval_f["crime"].to_numpy(dtype=np.float64)
    hist_pred = historical_baseline(Panel(frame=eval_f, year=panel_eval.year))
    hist_metrics = evaluate(hist_pred, y_eval)

    sq_errors: dict[tuple[str, str], np.ndarray] = {}
    models: dict[str, dict] = {"rf": {}, "en": {}}
    for variant in config.variants:
        X_train, cols = feature_matrix(train, variant, config.covariates)
        X_eval, _ = feature_matrix(eval_f, variant, config.covariates)

        en_fit = fit_elastic_net(
            X_train, y_train, lambdas=config.en_lambdas, alphas=config.en_alphas,
            folds=config.folds, seed=(config.seed, 101), feature_names=cols)
        rf_fit = fit_random_forest(
            X_train, y_train, trees_grid=config.rf_trees, depth_grid=config.rf_depths,
            max_features_grid=config.rf_max_features, folds=config.folds,
            seed=(config.seed, 202), threads=config.threads, feature_names=cols)

        for kind, fit in (("en", en_fit), ("rf", rf_fit)):
            pred = fit.predict(X_eval)
            m = evaluate(pred, y_eval)
            sq_errors[(kind, variant)] = (pred - y_eval) ** 2
            models[kind][variant] = {
                "predictors": cols,
                "hyperparameters": fit.hyperparameters(),
                "mse": m.mse,
                "mae": m.mae,
                "r2": m.to_dict()["r2"],
                "improvement_pct": improvement_pct(hist_metrics.mse, m.mse),
                "crimes_gained": crimes_gained(
                    hist_metrics.mae, m.mae, panel_eval.n_tracts),
            }

    wilcoxon: dict[str, dict] = {}
    for kind in ("rf", "en"):
        wilcoxon[kind] = {}
        for better, base in WILCOXON_PAIRS:
            if better in config.variants and base in config.variants:
                res = wilcoxon_signed_rank(
                    sq_errors[(kind, base)], sq_errors[(kind, better)])
                wilcoxon[kind][f"{better}_vs_{base}"] = res.to_dict()

    return EvalReport(
        historical=hist_metrics,
        models=models,
        wilcoxon=wilcoxon,
        n_tracts=panel_eval.n_tracts,
        train_year=panel_train.year,
        eval_year=panel_eval.year,
        config=config.to_dict(),
    )
