"""Statistical estimation for the epidemic and economic models."""

from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri

from .epidemic import (
    DEFAULT_CLAMP_EPS,
    InfectionRegressionModel,
    LogOddsDynamicsParams,
    LogOddsSeries,
    extract_log_odds,
)

__all__ = [
    "FitError",
    "RegressionFit",
    "NormalityTestResult",
    "FeasibleSetPCA",
    "Calibration",
    "ols_fit",
    "shapiro_wilk",
    "fit_infection_model",
    "fit_relative_increment",
    "fit_pca_bounds",
    "normality_table",
    "calibrate",
]

RANK_TOL = 1e-10


class FitError(ValueError):
    """A statistical fit cannot be carried out on the supplied data."""


@dataclass(frozen=True)
class RegressionFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    r_squared: float
    residuals: np.ndarray
    n_observations: int

    @property
    def sigma(self) -> float:
        """Residual standard error, sqrt(SSR / (n - p))."""
        dof = self.n_observations - len(self.coefficients)
        return float(np.sqrt(self.residuals @ self.residuals / dof))


@dataclass(frozen=True)
class NormalityTestResult:
    w_statistic: float
    p_value: float
    n: int


@dataclass(frozen=True)
class FeasibleSetPCA:
    """Box on principal-component scores of centred mobility vectors.

    Rows of ``a_matrix`` are orthonormal principal directions in
    descending variance order.
    """

    a_matrix: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        for name, shape in (("a_matrix", (6, 6)), ("lower", (6,)), ("upper", (6,)),
                            ("center", (6,))):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds exceed upper bounds")

    def scores(self, alpha) -> np.ndarray:
        return (np.asarray(alpha, dtype=float) - self.center) @ self.a_matrix.T

    def excess(self, alpha) -> np.ndarray:
        """Signed distance of each score outside its interval (0 inside)."""
        p = self.scores(alpha)
        return p - np.clip(p, self.lower, self.upper)

    def max_violation(self, alpha) -> float:
        return float(np.abs(self.excess(alpha)).max(initial=0.0))

    def to_dict(self) -> dict:
        return {"a_matrix": self.a_matrix.tolist(), "lower": self.lower.tolist(),
                "upper": self.upper.tolist(), "center": self.center.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeasibleSetPCA":
        return cls(np.array(d["a_matrix"]), np.array(d["lower"]), np.array(d["upper"]),
                   np.array(d["center"]))


def ols_fit(design_rows, responses, include_intercept: bool = True) -> RegressionFit:
    """Least squares via a thin QR factorisation.

    Standard errors use the unbiased residual variance.  R-squared is
    centred when an intercept is fitted and uncentred otherwise.
    """
    X = np.asarray(design_rows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(responses, dtype=float)
    n = len(y)
    if X.shape[0] != n:
        raise FitError("design and response lengths differ")
    if include_intercept:
        X = np.column_stack([np.ones(n), X])
    p = X.shape[1]
    if n <= p + 1:
        raise FitError(f"need more than {p + 1} observations for {p} coefficients, got {n}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise FitError("non-finite values in regression data")

    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise FitError("design matrix is rank deficient (zero column)")
    q, r = np.linalg.qr(X / norms)
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOL * diag.max():
        raise FitError("design matrix is rank deficient")

    scaled = solve_triangular(r, q.T @ y)
    coef = scaled / norms
    resid = y - X @ coef
    ssr = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum()) if include_intercept else float(y @ y)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    s2 = ssr / (n - p)
    r_inv = solve_triangular(r, np.eye(p))
    se = np.sqrt(s2 * (r_inv ** 2).sum(axis=1)) / norms
    return RegressionFit(coef, se, float(min(max(r2, 0.0), 1.0)), resid, n)


# Royston (1995) polynomial approximations, AS R94
_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)


def _poly(coefs, x):
    return sum(c * x ** k for k, c in enumerate(coefs))


def _sw_weights(n: int) -> np.ndarray:
    if n == 3:
        return np.array([-np.sqrt(0.5), 0.0, np.sqrt(0.5)])
    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    mm = m @ m
    u = 1.0 / np.sqrt(n)
    a = np.empty(n)
    an = m[-1] / np.sqrt(mm) + _poly(_SW_C1, u)
    if n > 5:
        an1 = m[-2] / np.sqrt(mm) + _poly(_SW_C2, u)
        phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
        a[2:-2] = m[2:-2] / np.sqrt(phi)
        a[-2], a[1] = an1, -an1
    else:
        phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
        a[1:-1] = m[1:-1] / np.sqrt(phi)
    a[-1], a[0] = an, -an
    return a


def shapiro_wilk(sample) -> NormalityTestResult:
    """Shapiro-Wilk W and its p-value (Royston's approximation, 3 <= n <= 5000)."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = len(x)
    if not 3 <= n <= 5000:
        raise FitError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    ss = ((x - x.mean()) ** 2).sum()
    if not ss > 0 or x[-1] - x[0] <= 1e-12 * max(abs(x[0]), abs(x[-1])):
        raise FitError("Shapiro-Wilk undefined for a sample with zero variance")
    a = _sw_weights(n)
    w = min((a @ x) ** 2 / ss, 1.0)

    if n == 3:
        p = max(6.0 / np.pi * (np.arcsin(np.sqrt(w)) - np.pi / 3.0), 0.0)
        return NormalityTestResult(float(w), float(min(p, 1.0)), n)
    y = np.log1p(-w) if w < 1 else -np.inf
    if n <= 11:
        gamma = _poly(_SW_G, n)
        if y >= gamma:
            return NormalityTestResult(float(w), 0.0, n)
        y = -np.log(gamma - y)
        mean, sd = _poly(_SW_C3, n), np.exp(_poly(_SW_C4, n))
    else:
        ln = np.log(n)
        mean, sd = _poly(_SW_C5, ln), np.exp(_poly(_SW_C6, ln))
    p = 1.0 - ndtr((y - mean) / sd)
    return NormalityTestResult(float(w), float(p), n)


def _beta_pairs(dataset, log_odds: LogOddsSeries):
    """Yield (date index t, beta_{t+1}) pairs with a defined moving average."""
    start = dataset.beta_start_date
    for t in range(len(dataset) - 1):
        if start is not None and dataset.dates[t] < start:
            continue
        if np.isnan(dataset.mobility_ma[t]).any():
            continue
        yield t, log_odds.beta[t]


def fit_infection_model(dataset, log_odds: LogOddsSeries, form: str = "level",
                        truncate: int = 0):
    """Regress infection log-odds on the previous day's 5-day mean mobility.

    ``form`` selects the response: ``"level"`` (beta), ``"difference"``
    (beta_{t+1} - beta_t) or ``"relative"`` (beta_{t+1} / beta_t - 1).  Only
    the level form feeds the control problem; the other two and
    ``truncate`` (drop the first pairs) are diagnostics.

    Returns ``(model, sigma_beta, fit, normality_of_residuals)``.
    """
    if form not in ("level", "difference", "relative"):
        raise ValueError(f"unknown response form {form!r}")
    rows, y = [], []
    for t, beta_next in _beta_pairs(dataset, log_odds):
        if form == "level":
            resp = beta_next
        else:
            if t == 0:
                continue
            prev = log_odds.beta[t - 1]
            resp = beta_next - prev if form == "difference" else beta_next / prev - 1.0
        rows.append(dataset.mobility_ma[t])
        y.append(resp)
    rows, y = rows[truncate:], y[truncate:]
    if len(y) < 20:
        raise FitError(f"infection fit needs at least 20 usable pairs, got {len(y)}")
    fit = ols_fit(np.array(rows), np.array(y), include_intercept=True)
    model = InfectionRegressionModel(float(fit.coefficients[0]), tuple(fit.coefficients[1:]))
    return model, fit.sigma, fit, shapiro_wilk(fit.residuals)


def fit_relative_increment(series) -> tuple[float, float]:
    """Mean and sample standard deviation of ``x[t+1] / x[t] - 1``."""
    x = np.asarray(series, dtype=float)
    if len(x) < 2:
        raise FitError("relative increments need at least two values")
    if np.any(x[:-1] == 0):
        raise FitError("relative increment undefined after a zero value")
    inc = x[1:] / x[:-1] - 1.0
    if len(inc) == 1:
        warnings.warn("single relative increment; volatility reported as 0",
                      RuntimeWarning, stacklevel=2)
        return float(inc[0]), 0.0
    return float(inc.mean()), float(inc.std(ddof=1))


def fit_pca_bounds(mobility) -> FeasibleSetPCA:
    """Principal directions of the mobility covariance and score bounds.

    ``mobility`` is a :class:`~esdp.data.MobilityTimeSeries` or an
    ``(n, 6)`` array.
    """
    x = np.asarray(getattr(mobility, "values", mobility), dtype=float)
    if x.ndim != 2 or x.shape[1] != 6:
        raise FitError("mobility history must have 6 columns")
    if len(x) < 7:
        raise FitError(f"PCA needs at least 7 observations, got {len(x)}")
    center = x.mean(axis=0)
    xc = x - center
    cov = xc.T @ xc / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    if np.ptp(x, axis=0).max() == 0 or evals.max() <= 0:
        raise FitError("mobility history has zero covariance")
    order = np.argsort(evals)[::-1]
    a = evecs[:, order].T
    # deterministic orientation: largest-magnitude entry of each row positive
    pivot = a[np.arange(6), np.argmax(np.abs(a), axis=1)]
    a *= np.where(pivot < 0, -1.0, 1.0)[:, None]
    scores = xc @ a.T
    # pad by a few ulps so history stays inside however the scores are summed
    pad = 64 * np.finfo(float).eps * np.abs(xc).max()
    return FeasibleSetPCA(a, scores.min(axis=0) - pad, scores.max(axis=0) + pad, center)


def _forms(series):
    s = np.asarray(series, dtype=float)
    out = {"level": s, "difference": s[1:] - s[:-1]}
    with np.errstate(divide="ignore", invalid="ignore"):
        out["relative"] = s[1:] / s[:-1] - 1.0
    return out


def normality_table(log_odds: LogOddsSeries, beta_mask=None, gd_mask=None) -> dict:
    """Shapiro-Wilk p-values for level, difference and relative forms."""
    table = {}
    for name, series, mask in (("beta", log_odds.beta, beta_mask),
                               ("gamma", log_odds.gamma, gd_mask),
                               ("delta", log_odds.delta, gd_mask)):
        s = series if mask is None else series[mask]
        row = {}
        for form, values in _forms(s).items():
            values = values[np.isfinite(values)]
            try:
                row[form] = shapiro_wilk(values).p_value
            except FitError:
                row[form] = None
        table[name] = row
    return table


@dataclass(frozen=True)
class Calibration:
    log_odds: LogOddsSeries
    infection: InfectionRegressionModel
    infection_fit: RegressionFit
    infection_normality: NormalityTestResult
    dynamics: LogOddsDynamicsParams
    feasible: FeasibleSetPCA
    normality: dict
    economic: object = None
    economic_fit: RegressionFit | None = None
    economic_normality: NormalityTestResult | None = None

    def report(self) -> dict:
        names = ("intercept", "rr", "gp", "pa", "ts", "wp", "re")
        rep = {
            "infection": {
                "coefficients": dict(zip(names, self.infection_fit.coefficients.tolist())),
                "standard_errors": dict(zip(names, self.infection_fit.standard_errors.tolist())),
                "r_squared": self.infection_fit.r_squared,
                "shapiro_wilk_p": self.infection_normality.p_value,
                "n_observations": self.infection_fit.n_observations,
            },
            "dynamics": self.dynamics.to_dict(),
            "normality": self.normality,
            "pca": self.feasible.to_dict(),
            "economic": None,
        }
        if self.economic is not None:
            enames = names + ("i", "r", "d")
            rep["economic"] = {
                "coefficients": dict(zip(enames, self.economic_fit.coefficients.tolist())),
                "standard_errors": dict(zip(enames, self.economic_fit.standard_errors.tolist())),
                "r_squared": self.economic_fit.r_squared,
                "shapiro_wilk_p": self.economic_normality.p_value,
                "n_observations": self.economic_fit.n_observations,
            }
        return rep

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2)


def calibrate(dataset, clamp_eps: float = DEFAULT_CLAMP_EPS, econ_start: dt.date | None = None,
              pca_start: dt.date | None = None) -> Calibration:
    """Run every fit on an aligned dataset.

    The economic model is fitted only when the dataset carries index closes.
    """
    from .economic import fit_economic_model

    log_odds = extract_log_odds(dataset.epidemic, clamp_eps=clamp_eps, dates=dataset.dates)
    model, sigma_beta, fit, norm = fit_infection_model(dataset, log_odds)

    # log_odds[k] belongs to date k + 1
    next_dates = np.array(dataset.dates[1:], dtype="datetime64[D]")
    gd_mask = np.ones(len(log_odds), dtype=bool)
    if dataset.gamma_delta_start_date is not None:
        gd_mask = next_dates >= np.datetime64(dataset.gamma_delta_start_date, "D")
    beta_mask = np.ones(len(log_odds), dtype=bool)
    if dataset.beta_start_date is not None:
        beta_mask = next_dates >= np.datetime64(dataset.beta_start_date, "D")
    mu_g, sd_g = fit_relative_increment(log_odds.gamma[gd_mask])
    mu_d, sd_d = fit_relative_increment(log_odds.delta[gd_mask])
    dynamics = LogOddsDynamicsParams(mu_g, sd_g, mu_d, sd_d, sigma_beta)

    pca_mask = dataset.date_mask(start=pca_start if pca_start is not None
                                 else dataset.beta_start_date)
    feasible = fit_pca_bounds(dataset.mobility[pca_mask])

    econ = efit = enorm = None
    if np.isfinite(dataset.index_close).any():
        econ, efit, enorm = fit_economic_model(dataset, start_date=econ_start)
    return Calibration(log_odds, model, fit, norm, dynamics, feasible,
                       normality_table(log_odds, beta_mask, gd_mask), econ, efit, enorm)
