"""Negative binomial panel regression with tract and hour fixed effects.

The count model is NB2 (variance mu + mu^2/theta) with a log link.
Coefficients are estimated by iteratively reweighted least squares at
fixed dispersion, alternating with a one-dimensional Newton update of
the dispersion on the profile likelihood (golden-section fallback).
Accepted steps never decrease the log-likelihood: candidate steps are
halved toward the previous iterate until they improve it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import gammaln, polygamma, psi
from scipy.stats import chi2, norm

from .errors import ValidationError
from .panel import HOURS_PER_WEEK, Panel

log = logging.getLogger(__name__)

THETA_FLOOR = 1e-4
THETA_CEILING = 1e8
ETA_CLIP = 30.0  # linear predictor bound; exp(30) ~ 1e13 keeps mu finite

MODEL_VARIANTS = {
    "baseline": ("past_crime",),
    "1a": ("past_crime", "checkins"),
    "1b": ("past_crime", "checkins", "passthrough_flow"),
    "2a": ("past_crime", "inout_flow", "selfloop_flow"),
    "2b": ("past_crime", "inout_flow", "selfloop_flow", "passthrough_flow"),
}
SUITE_LR_PAIRS = (("1a", "baseline"), ("1b", "1a"), ("2b", "2a"))


@dataclass(frozen=True)
class ModelSpec:
    """Response, regressors, and fixed-effect switches for one fit."""

    regressors: tuple[str, ...]
    response: str = "crime"
    tract_fe: bool = True
    hour_fe: bool = True


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    names: list[str]
    spec: ModelSpec
    dropped: list[str] = field(default_factory=list)  # absorbed by tract FE


def build_design(panel: Panel, spec: ModelSpec, tract_ref: str | None = None,
                 hour_ref: int = 0) -> Design:
    """Dense design matrix: intercept, FE dummies minus a reference, raw regressors.

    Regressors constant within every tract are absorbed by the tract
    dummies and dropped with a note (covariate robustness runs);
    globally constant regressors are an error.
    """
    df = panel.frame.sort_values(["tract_id", "t"], kind="stable").reset_index(drop=True)
    tract_ids = sorted(df["tract_id"].unique())
    n_tracts = len(tract_ids)
    if len(df) != n_tracts * HOURS_PER_WEEK:
        raise ValidationError("panel is not a complete (tract x hour) grid")
    if spec.response not in df.columns:
        raise ValidationError(f"response column {spec.response!r} not in panel")
    y = df[spec.response].to_numpy(dtype=np.float64)

    keep_regs: list[str] = []
    dropped: list[str] = []
    for r in spec.regressors:
        if r not in df.columns:
            raise ValidationError(f"regressor column {r!r} not in panel")
        col = df[r].to_numpy(dtype=np.float64)
        if np.ptp(col) == 0.0:
            raise ValidationError(f"regressor {r!r} is constant (unidentifiable)")
        if spec.tract_fe:
            within = df.groupby("tract_id", sort=True)[r].nunique()
            if (within == 1).all():
                dropped.append(r)
                continue
        keep_regs.append(r)
    if dropped:
        log.info("regressors absorbed by tract fixed effects: %s", dropped)

    n = len(df)
    cols: list[str] = ["intercept"]
    if spec.tract_fe:
        ref = tract_ref if tract_ref is not None else tract_ids[0]
        if ref not in tract_ids:
            raise ValidationError(f"tract reference {ref!r} not in panel")
        cols += [f"tract[{t}]" for t in tract_ids if t != ref]
    if spec.hour_fe:
        cols += [f"hour[{t}]" for t in range(HOURS_PER_WEEK) if t != hour_ref]
    cols += keep_regs

    X = np.zeros((n, len(cols)), dtype=np.float64)
    X[:, 0] = 1.0
    j = 1
    if spec.tract_fe:
        ref = tract_ref if tract_ref is not None else tract_ids[0]
        tract_row = df["tract_id"].map({t: i for i, t in enumerate(tract_ids)}).to_numpy()
        for i, t in enumerate(tract_ids):
            if t == ref:
                continue
            X[tract_row == i, j] = 1.0
            j += 1
    if spec.hour_fe:
        hours = df["t"].to_numpy()
        for t in range(HOURS_PER_WEEK):
            if t == hour_ref:
                continue
            X[hours == t, j] = 1.0
            j += 1
    for r in keep_regs:
        X[:, j] = df[r].to_numpy(dtype=np.float64)
        j += 1
    return Design(X=X, y=y, names=cols, spec=spec, dropped=dropped)


def nb_loglik(y: np.ndarray, mu: np.ndarray, theta: float) -> float:
    """NB2 log-likelihood (variance mu + mu^2/theta)."""
    return float(
        np.sum(
            gammaln(y + theta) - gammaln(theta) - gammaln(y + 1.0)
            + theta * np.log(theta / (theta + mu))
            + y * np.log(mu / (theta + mu))
        )
    )


def nb_score(X: np.ndarray, y: np.ndarray, mu: np.ndarray, theta: float) -> np.ndarray:
    """Analytic gradient of the log-likelihood in the coefficients."""
    return X.T @ (theta * (y - mu) / (theta + mu))


def _mu(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(X @ beta, -ETA_CLIP, ETA_CLIP))


def _solve_wls(X: np.ndarray, w: np.ndarray, z: np.ndarray, names: list[str]) -> np.ndarray:
    Xw = X * w[:, None]
    A = Xw.T @ X
    b = Xw.T @ z
    try:
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        beta = None
    if beta is None or not np.all(np.isfinite(beta)):
        # identify the dependent columns for the error message
        _, R, piv = _qr_pivot(A)
        diag = np.abs(np.diag(R))
        tol = diag.max() * max(A.shape) * np.finfo(float).eps if diag.size else 0.0
        rank = int((diag > tol).sum())
        bad = [names[i] for i in piv[rank:]]
        raise ValidationError(f"design is rank deficient; dependent columns: {bad}")
    return beta


def _qr_pivot(A: np.ndarray):
    from scipy.linalg import qr

    return qr(A, pivoting=True)


def _halving_step(beta_old, beta_new, ll_old, ll_fn, slack=1e-10):
    """Accept beta_new if it does not decrease the log-likelihood; halve toward
    beta_old otherwise. Returns (beta, ll, improved)."""
    beta = beta_new
    for _ in range(40):
        ll = ll_fn(beta)
        if np.isfinite(ll) and ll >= ll_old - slack * (1.0 + abs(ll_old)):
            return beta, ll, True
        beta = 0.5 * (beta + beta_old)
    return beta_old, ll_old, False


def _poisson_irls(X, y, names, tol=1e-10, max_iter=50):
    """Poisson IRLS used to initialize the NB coefficients."""
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(max(y.mean(), 1e-8))
    mu = _mu(X, beta)
    ll = float(np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))
    for _ in range(max_iter):
        eta = np.clip(X @ beta, -ETA_CLIP, ETA_CLIP)
        z = eta + (y - mu) / mu
        cand = _solve_wls(X, mu, z, names)
        beta, ll_new, improved = _halving_step(
            beta, cand, ll,
            lambda b: float(np.sum(y * np.log(_mu(X, b)) - _mu(X, b) - gammaln(y + 1.0))),
        )
        mu = _mu(X, beta)
        if not improved or abs(ll_new - ll) <= tol * (1.0 + abs(ll)):
            ll = ll_new
            break
        ll = ll_new
    return beta, mu, ll


def _theta_moments(y, mu):
    resid = ((y - mu) ** 2 - mu).mean()
    mu2 = (mu ** 2).mean()
    if resid <= 0 or mu2 <= 0:
        return THETA_CEILING
    return float(np.clip(mu2 / resid, THETA_FLOOR, THETA_CEILING))


def _theta_profile_dll(y, mu, theta):
    g1 = np.sum(psi(y + theta) - psi(theta) + np.log(theta) + 1.0
                - np.log(theta + mu) - (y + theta) / (theta + mu))
    g2 = np.sum(polygamma(1, y + theta) - polygamma(1, theta) + 1.0 / theta
                - 2.0 / (theta + mu) + (y + theta) / (theta + mu) ** 2)
    return float(g1), float(g2)


def _golden_section_theta(y, mu, lo, hi, iters=60):
    """Maximize the profile likelihood in log-theta on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = np.log(lo), np.log(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = nb_loglik(y, mu, np.exp(c))
    fd = nb_loglik(y, mu, np.exp(d))
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = nb_loglik(y, mu, np.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = nb_loglik(y, mu, np.exp(d))
    x = c if fc >= fd else d
    return float(np.exp(x))


def _update_theta(y, mu, theta, ceiling):
    """One profile-likelihood dispersion update: Newton in log-theta when it
    improves, golden-section bracket otherwise."""
    ll0 = nb_loglik(y, mu, theta)
    xi = np.log(theta)
    g1, g2 = _theta_profile_dll(y, mu, theta)
    d1 = theta * g1
    d2 = theta * theta * g2 + theta * g1
    if d2 < 0 and np.isfinite(d1):
        step = -d1 / d2
        cand = float(np.clip(np.exp(xi + np.clip(step, -4.0, 4.0)),
                             THETA_FLOOR, ceiling))
        if nb_loglik(y, mu, cand) >= ll0:
            return cand
    lo = max(THETA_FLOOR, theta / 16.0)
    hi = min(ceiling, theta * 16.0)
    cand = _golden_section_theta(y, mu, lo, hi)
    return cand if nb_loglik(y, mu, cand) >= ll0 else theta


@dataclass
class PGLMFit:
    """Estimated coefficients and fit diagnostics for one model."""

    spec: ModelSpec
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    dispersion: float
    log_likelihood: float
    aic: float
    n_obs: int
    converged: bool
    iterations: int
    ll_trace: list[float] = field(default_factory=list, repr=False)
    diagnostics: dict = field(default_factory=dict)
    absorbed: list[str] = field(default_factory=list)

    @property
    def n_coefficients(self) -> int:
        return len(self.coefficients)

    def coef_array(self, names: list[str]) -> np.ndarray:
        return np.array([self.coefficients[n] for n in names])

    def wald_p(self, name: str) -> float:
        se = self.standard_errors[name]
        if se <= 0:
            return float("nan")
        z = self.coefficients[name] / se
        return float(2.0 * norm.sf(abs(z)))

    def to_dict(self) -> dict:
        return {
            "response": self.spec.response,
            "regressors": list(self.spec.regressors),
            "coefficients": self.coefficients,
            "standard_errors": self.standard_errors,
            "dispersion": self.dispersion,
            "log_likelihood": self.log_likelihood,
            "aic": self.aic,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "absorbed_regressors": self.absorbed,
            "diagnostics": self.diagnostics,
        }


def fit_nb_pglm(panel: Panel, spec: ModelSpec, tolerance: float = 1e-8,
                max_iter: int = 100, theta_ceiling: float = THETA_CEILING,
                tract_ref: str | None = None, hour_ref: int = 0) -> PGLMFit:
    """Maximize the NB2 likelihood over coefficients and dispersion."""
    design = build_design(panel, spec, tract_ref=tract_ref, hour_ref=hour_ref)
    X, y, names = design.X, design.y, design.names
    if y.min() < 0:
        raise ValidationError("response contains negative counts")
    if y.max() == 0:
        raise ValidationError("response is identically zero; the mean model is unbounded")

    beta, mu, _ = _poisson_irls(X, y, names)
    theta = _theta_moments(y, mu)
    ll = nb_loglik(y, mu, theta)
    trace = [ll]
    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        ll_start = ll
        # (a) one IRLS step for the coefficients at fixed dispersion
        eta = np.clip(X @ beta, -ETA_CLIP, ETA_CLIP)
        w = mu * theta / (theta + mu)
        z = eta + (y - mu) / mu
        cand = _solve_wls(X, w, z, names)
        th = theta
        beta, ll, _ = _halving_step(beta, cand, ll, lambda b: nb_loglik(y, _mu(X, b), th))
        mu = _mu(X, beta)
        trace.append(ll)
        # (b) dispersion update on the profile likelihood
        theta = _update_theta(y, mu, theta, theta_ceiling)
        ll = nb_loglik(y, mu, theta)
        trace.append(ll)
        if abs(ll - ll_start) <= tolerance * (1.0 + abs(ll_start)):
            converged = True
            break

    capped = theta >= theta_ceiling * (1.0 - 1e-12)
    if capped:
        log.info("dispersion at ceiling %.2g: Poisson limit", theta_ceiling)

    info = X.T @ (X * ((y + theta) * mu * theta / (theta + mu) ** 2)[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"observed information is singular: {exc}") from exc
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    n_params = len(names) + 1  # dispersion counts as one parameter
    fit = PGLMFit(
        spec=spec,
        coefficients={n: float(b) for n, b in zip(names, beta)},
        standard_errors={n: float(s) for n, s in zip(names, se)},
        dispersion=float(theta),
        log_likelihood=float(ll),
        aic=float(-2.0 * ll + 2.0 * n_params),
        n_obs=len(y),
        converged=converged,
        iterations=iterations,
        ll_trace=trace,
        diagnostics={"dispersion_capped": bool(capped)},
        absorbed=design.dropped,
    )
    if not converged:
        log.warning("NB fit did not converge in %d iterations", max_iter)
    return fit


def score_check(panel: Panel, fit: PGLMFit, rel_floor: float = 1.0) -> float:
    """Max elementwise relative error between the analytic score and a central
    finite-difference gradient of the log-likelihood at the fitted optimum.

    Each coordinate is compared in column-scaled units (steps of 1e-6 in
    the linear predictor per unit column magnitude), which keeps the
    finite-difference truncation error controlled for raw-count
    regressors. Relative error uses max(rel_floor, |analytic|,
    |numeric|) in the denominator so near-zero optimum gradients compare
    on an absolute scale.
    """
    design = build_design(panel, fit.spec)
    X, y = design.X, design.y
    beta = fit.coef_array(design.names)
    theta = fit.dispersion
    col_scale = np.maximum(1.0, np.abs(X).max(axis=0))
    analytic = nb_score(X, y, _mu(X, beta), theta) / col_scale
    numeric = np.empty_like(analytic)
    for j in range(len(beta)):
        h = 1e-6 * max(1.0, abs(beta[j]) * col_scale[j])
        step = h / col_scale[j]
        bp, bm = beta.copy(), beta.copy()
        bp[j] += step
        bm[j] -= step
        numeric[j] = (nb_loglik(y, _mu(X, bp), theta)
                      - nb_loglik(y, _mu(X, bm), theta)) / (2.0 * h)
    denom = np.maximum(rel_floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def lr_test(full: PGLMFit, nested: PGLMFit) -> tuple[float, int, float]:
    """Likelihood-ratio test of a nested model against the full model."""
    if full.spec.response != nested.spec.response or full.n_obs != nested.n_obs:
        raise ValidationError("models were fit on different data")
    if not set(nested.spec.regressors) <= set(full.spec.regressors):
        raise ValidationError("models are not nested")
    if (full.spec.tract_fe, full.spec.hour_fe) != (nested.spec.tract_fe, nested.spec.hour_fe):
        raise ValidationError("models differ in fixed-effect structure")
    stat = max(0.0, 2.0 * (full.log_likelihood - nested.log_likelihood))
    df = full.n_coefficients - nested.n_coefficients
    if df == 0:
        return stat, 0, 1.0
    return stat, df, float(chi2.sf(stat, df))


def irr(fit: PGLMFit, regressor: str, scale: float = 100.0) -> dict[str, float]:
    """Percent change in expected crime per `scale` units of a regressor."""
    if regressor not in fit.coefficients:
        raise ValidationError(f"regressor {regressor!r} not in fit")
    c = fit.coefficients[regressor]
    s = fit.standard_errors[regressor]
    return {
        "pct_change": (np.exp(scale * c) - 1.0) * 100.0,
        "ci_low": (np.exp(scale * (c - 1.96 * s)) - 1.0) * 100.0,
        "ci_high": (np.exp(scale * (c + 1.96 * s)) - 1.0) * 100.0,
        "p_value": fit.wald_p(regressor),
    }


@dataclass
class SuiteResult:
    fits: dict[str, PGLMFit]
    lr_tests: dict[str, dict[str, float]]
    irr_scale: float

    def aic_table(self) -> pd.DataFrame:
        rows = [
            {
                "model": name,
                "regressors": ", ".join(fit.spec.regressors),
                "aic": fit.aic,
                "log_likelihood": fit.log_likelihood,
                "converged": fit.converged,
            }
            for name, fit in self.fits.items()
        ]
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        out = {"models": {}, "lr_tests": self.lr_tests}
        for name, fit in self.fits.items():
            d = fit.to_dict()
            d["irr_per_scale"] = {
                r: irr(fit, r, self.irr_scale)
                for r in fit.spec.regressors
                if r in fit.coefficients
            }
            out["models"][name] = d
        out["irr_scale"] = self.irr_scale
        return out


def model_suite(panel: Panel, response: str = "crime", extra_regressors: tuple[str, ...] = (),
                irr_scale: float = 100.0, tolerance: float = 1e-8,
                max_iter: int = 100, threads: int = 1) -> SuiteResult:
    """Fit the five standard specifications and run the declared LR tests.

    extra_regressors (e.g. socio-demographic covariates) are appended to
    every specification; tract-constant ones are absorbed by the fixed
    effects and noted on the fit.
    """
    specs = {
        name: ModelSpec(regressors=tuple(regs) + tuple(extra_regressors), response=response)
        for name, regs in MODEL_VARIANTS.items()
    }

    def run(item):
        name, spec = item
        return name, fit_nb_pglm(panel, spec, tolerance=tolerance, max_iter=max_iter)

    from .parallel import parallel_map

    fits = dict(parallel_map(run, list(specs.items()), threads))
    tests = {}
    for full_name, nested_name in SUITE_LR_PAIRS:
        stat, df, p = lr_test(fits[full_name], fits[nested_name])
        tests[f"{full_name}_vs_{nested_name}"] = {"statistic": stat, "df": df, "p_value": p}
    return SuiteResult(fits=fits, lr_tests=tests, irr_scale=irr_scale)
