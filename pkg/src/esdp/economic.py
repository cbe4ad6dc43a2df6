"""COVID-driven economic value learned from a market index.

The index close is regressed on same-day mobility and the I, R, D
fractions.  The fitted linear map is then used as a deterministic proxy
for economic health, and the tracking error measures how far its returns
drift from a target growth path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EconomicModel",
    "EconomicTarget",
    "fit_economic_model",
    "predict_value",
    "tracking_error",
]

_COEF_NAMES = ("intercept", "rr", "gp", "pa", "ts", "wp", "re", "i", "r", "d")


@dataclass(frozen=True)
class EconomicModel:
    kappa0: float
    kappa: tuple
    kappa_i: float
    kappa_r: float
    kappa_d: float

    def __post_init__(self):
        k = tuple(float(v) for v in self.kappa)
        if len(k) != 6:
            raise ValueError("economic model needs exactly 6 mobility coefficients")
        object.__setattr__(self, "kappa", k)

    @property
    def kappa_array(self) -> np.ndarray:
        return np.asarray(self.kappa)

    @property
    def coefficients(self) -> np.ndarray:
        """All ten coefficients, intercept first, in regression order."""
        return np.array([self.kappa0, *self.kappa, self.kappa_i, self.kappa_r, self.kappa_d])

    @classmethod
    def from_coefficients(cls, coef) -> "EconomicModel":
        coef = [float(v) for v in coef]
        return cls(coef[0], tuple(coef[1:7]), coef[7], coef[8], coef[9])

    def predict(self, alpha, i, r, d):
        """Vectorised prediction; ``alpha`` has a trailing axis of length 6."""
        return (self.kappa0 + np.asarray(alpha) @ self.kappa_array
                + self.kappa_i * np.asarray(i) + self.kappa_r * np.asarray(r)
                + self.kappa_d * np.asarray(d))

    def to_dict(self) -> dict:
        return dict(zip(_COEF_NAMES, self.coefficients.tolist()))

    @classmethod
    def from_dict(cls, d: dict) -> "EconomicModel":
        return cls.from_coefficients([d[k] for k in _COEF_NAMES])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EconomicModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EconomicTarget:
    """Target value path ``spx0 * (1 + r_k)`` for horizon steps ``k``."""

    spx0: float
    rate_path: tuple = field(default=())

    def __post_init__(self):
        if not self.spx0 > 0:
            raise ValueError("baseline economic value must be positive")
        object.__setattr__(self, "rate_path", tuple(float(r) for r in self.rate_path))

    def rate(self, step: int) -> float:
        return self.rate_path[step] if step < len(self.rate_path) else 0.0

    def rates(self, n: int) -> np.ndarray:
        return np.array([self.rate(k) for k in range(n)])

    def value(self, step: int) -> float:
        return self.spx0 * (1.0 + self.rate(step))

    def to_dict(self) -> dict:
        return {"spx0": self.spx0, "rate_path": list(self.rate_path)}

    @classmethod
    def from_dict(cls, d: dict) -> "EconomicTarget":
        return cls(float(d["spx0"]), tuple(d.get("rate_path", ())))


def predict_value(model: EconomicModel, alpha, state) -> float:
    return float(model.predict(np.asarray(alpha, dtype=float), state.i, state.r, state.d))


def tracking_error(values, target: EconomicTarget) -> float:
    """Root mean square deviation of returns from the target rates.

    ``values`` is a 1-d sequence indexed by horizon step, or a 2-d
    ``(paths, steps)`` array whose entries are pooled into one RMSE.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("tracking error needs at least one value")
    steps = v.shape[-1]
    dev = (v - target.spx0) / target.spx0 - target.rates(steps)
    return float(np.sqrt(np.mean(dev ** 2)))


def fit_economic_model(dataset, start_date=None, end_date=None):
    """Regress index closes on raw mobility and I, R, D.

    Only dates carrying a close take part.  Returns
    ``(EconomicModel, RegressionFit, NormalityTestResult)``.
    """
    from .calibration import FitError, ols_fit, shapiro_wilk

    rows, y = [], []
    for k, date in enumerate(dataset.dates):
        close = dataset.index_close[k]
        if np.isnan(close):
            continue
        if start_date is not None and date < start_date:
            continue
        if end_date is not None and date > end_date:
            continue
        s, i, r, d = dataset.epidemic[k]
        rows.append([*dataset.mobility[k], i, r, d])
        y.append(close)
    if len(y) < 15:
        raise FitError(f"economic fit needs at least 15 priced dates, got {len(y)}")
    fit = ols_fit(np.array(rows), np.array(y), include_intercept=True)
    return EconomicModel.from_coefficients(fit.coefficients), fit, shapiro_wilk(fit.residuals)
