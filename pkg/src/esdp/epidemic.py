"""Discrete-time SIRD recursion driven by stochastic log-odds.

Rates of infection, recovery and death are sigmoids of real-valued
log-odds.  The functions here accept scalars or numpy arrays so the same
code serves single trajectories and Monte Carlo batches.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EpidemicState",
    "LogOddsTriple",
    "LogOddsDynamicsParams",
    "InfectionRegressionModel",
    "NoiseVector",
    "LogOddsSeries",
    "sigmoid",
    "logit",
    "sird_step",
    "sird_step_arrays",
    "extract_log_odds",
    "sample_next_log_odds",
    "DEFAULT_CLAMP_EPS",
]

DEFAULT_CLAMP_EPS = 1e-8
CONSERVATION_TOL = 1e-12


@dataclass(frozen=True)
class EpidemicState:
    s: float
    i: float
    r: float
    d: float

    def __post_init__(self):
        comps = (self.s, self.i, self.r, self.d)
        if not all(np.isfinite(c) for c in comps):
            raise ValueError(f"non-finite epidemic state {comps}")
        if min(comps) < 0.0:
            raise ValueError(f"negative compartment in {comps}")
        if abs(sum(comps) - 1.0) > CONSERVATION_TOL:
            raise ValueError(f"compartments sum to {sum(comps)!r}, expected 1")

    @classmethod
    def from_ird(cls, i: float, r: float, d: float) -> "EpidemicState":
        return cls(1.0 - i - r - d, i, r, d)

    @property
    def confirmed(self) -> float:
        return self.i + self.r + self.d

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.i, self.r, self.d])


@dataclass(frozen=True)
class LogOddsTriple:
    beta: float
    gamma: float
    delta: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.beta, self.gamma, self.delta)):
            raise ValueError(f"non-finite log-odds {self}")


@dataclass(frozen=True)
class LogOddsDynamicsParams:
    """Drift/volatility of the recovery and death log-odds plus the
    residual volatility of the infection regression."""

    mu_gamma: float
    sigma_gamma: float
    mu_delta: float
    sigma_delta: float
    sigma_beta: float

    def __post_init__(self):
        for name in ("sigma_gamma", "sigma_delta", "sigma_beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "mu_gamma": self.mu_gamma,
            "sigma_gamma": self.sigma_gamma,
            "mu_delta": self.mu_delta,
            "sigma_delta": self.sigma_delta,
            "sigma_beta": self.sigma_beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogOddsDynamicsParams":
        return cls(**{k: float(d[k]) for k in
                      ("mu_gamma", "sigma_gamma", "mu_delta", "sigma_delta", "sigma_beta")})


@dataclass(frozen=True)
class InfectionRegressionModel:
    """Infection log-odds as an affine function of 5-day mean mobility.

    ``c`` is ordered (RR, GP, PA, TS, WP, RE).
    """

    c0: float
    c: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if len(c) != 6:
            raise ValueError("infection model needs exactly 6 mobility coefficients")
        object.__setattr__(self, "c", c)

    @property
    def c_array(self) -> np.ndarray:
        return np.asarray(self.c)

    def mean_beta(self, mobility_ma) -> np.ndarray | float:
        return self.c0 + np.asarray(mobility_ma) @ self.c_array

    def to_dict(self) -> dict:
        return {"c0": self.c0, "c": list(self.c)}

    @classmethod
    def from_dict(cls, d: dict) -> "InfectionRegressionModel":
        return cls(float(d["c0"]), tuple(d["c"]))


@dataclass(frozen=True)
class NoiseVector:
    z_beta: float
    z_gamma: float
    z_delta: float


@dataclass(frozen=True)
class LogOddsSeries:
    """Log-odds extracted from consecutive epidemic states.

    Entry ``k`` holds the log-odds for the transition from state ``k`` to
    state ``k + 1``; ``clamped`` flags (beta, gamma, delta) per transition.
    """

    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    clamped: np.ndarray

    def __len__(self):
        return len(self.beta)

    def triple(self, k: int) -> LogOddsTriple:
        return LogOddsTriple(float(self.beta[k]), float(self.gamma[k]), float(self.delta[k]))

    @property
    def any_clamped(self) -> bool:
        return bool(self.clamped.any())


def sigmoid(x):
    """Logistic function, numerically safe at both tails."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise ValueError("logit is defined only on the open interval (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def sird_step_arrays(i, r, d, beta, gamma, delta):
    """Vectorised SIRD step on arrays of I, R, D and next log-odds.

    Returns ``(s, i, r, d)`` for the next day.  A negative next ``I`` is
    clamped to zero; the susceptible fraction absorbs the difference.
    """
    i, r, d = (np.asarray(v, dtype=float) for v in (i, r, d))
    s = 1.0 - i - r - d
    pb, pg, pd = sigmoid(beta), sigmoid(gamma), sigmoid(delta)
    i_next = np.maximum(i * (1.0 + s * pb - pg - pd), 0.0)
    r_next = r + i * pg
    d_next = d + i * pd
    s_next = 1.0 - i_next - r_next - d_next
    return s_next, i_next, r_next, d_next


def sird_step(state: EpidemicState, next_log_odds: LogOddsTriple) -> EpidemicState:
    s, i, r, d = sird_step_arrays(state.i, state.r, state.d,
                                  next_log_odds.beta, next_log_odds.gamma,
                                  next_log_odds.delta)
    return EpidemicState(float(s), float(i), float(r), float(d))


def extract_log_odds(states, clamp_eps: float = DEFAULT_CLAMP_EPS,
                     dates=None) -> LogOddsSeries:
    """Back out the daily log-odds that reproduce a sequence of states.

    ``states`` is a sequence of :class:`EpidemicState` or an ``(n, 4)``
    array of (S, I, R, D) rows.  Rate arguments outside
    ``[clamp_eps, 1 - clamp_eps]`` are clamped and reported with a warning.
    """
    arr = np.array([s.as_array() for s in states]) if not isinstance(states, np.ndarray) \
        else np.asarray(states, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4 or arr.shape[0] < 2:
        raise ValueError("need at least two (S, I, R, D) states")
    i, r, d = arr[:, 1], arr[:, 2], arr[:, 3]
    c = i + r + d
    bad = np.flatnonzero(i[:-1] <= 0.0)
    if bad.size:
        where = dates[bad[0]] if dates is not None else int(bad[0])
        raise ValueError(f"infectious fraction is zero at {where}; log-odds undefined")

    it = i[:-1]
    args = np.column_stack([
        (c[1:] - c[:-1]) / (it * (1.0 - c[:-1])),
        (r[1:] - r[:-1]) / it,
        (d[1:] - d[:-1]) / it,
    ])
    lo, hi = clamp_eps, 1.0 - clamp_eps
    clamped = (args < lo) | (args > hi)
    for k in np.flatnonzero(clamped.any(axis=1)):
        which = [n for n, f in zip(("beta", "gamma", "delta"), clamped[k]) if f]
        where = dates[k + 1] if dates is not None else k + 1
        warnings.warn(f"clamped {', '.join(which)} rate argument at {where}",
                      RuntimeWarning, stacklevel=2)
    lodds = logit(np.clip(args, lo, hi))
    return LogOddsSeries(lodds[:, 0], lodds[:, 1], lodds[:, 2], clamped)


def sample_next_log_odds(prev: LogOddsTriple, mobility_ma, model: InfectionRegressionModel,
                         params: LogOddsDynamicsParams, noise: NoiseVector) -> LogOddsTriple:
    beta = model.c0 + float(np.dot(model.c_array, np.asarray(mobility_ma, dtype=float)))
    beta += params.sigma_beta * noise.z_beta
    gamma = prev.gamma * (1.0 + params.mu_gamma + params.sigma_gamma * noise.z_gamma)
    delta = prev.delta * (1.0 + params.mu_delta + params.sigma_delta * noise.z_delta)
    return LogOddsTriple(beta, gamma, delta)
