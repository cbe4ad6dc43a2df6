"""The efficient-social-distancing control problem as a finite-horizon MDP.

The state is ``w = (X, lagged controls)`` with ``X = (I, R, D, beta,
gamma, delta)`` and the four most recent mobility vectors, 30 numbers in
all.  Batched helpers operate on ``x`` of shape ``(n, 6)`` and ``lags`` of
shape ``(n, 4, 6)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import FeasibleSetPCA
from .economic import EconomicModel, EconomicTarget
from .epidemic import (
    InfectionRegressionModel,
    LogOddsDynamicsParams,
    NoiseVector,
    sigmoid,
)

__all__ = [
    "ControlState",
    "CostConfig",
    "ProblemSpec",
    "Rollout",
    "transition",
    "running_cost",
    "feasibility_penalty",
    "cumulative_cost",
    "step_arrays",
    "rollout",
    "constant_policy",
]

N_LAGS = 4
STATE_DIM = 6 + 6 * N_LAGS
SPEC_VERSION = 1


@dataclass(frozen=True)
class ControlState:
    x: np.ndarray
    lags: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(6)
        lags = np.asarray(self.lags, dtype=float).reshape(N_LAGS, 6)
        if x[:3].min() < 0 or x[:3].sum() > 1.0 + 1e-12:
            raise ValueError("I, R, D must be non-negative with I + R + D <= 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "lags", lags)

    @classmethod
    def from_vector(cls, v) -> "ControlState":
        v = np.asarray(v, dtype=float)
        if v.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have {STATE_DIM} entries")
        return cls(v[:6], v[6:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.lags.ravel()])

    @property
    def i(self): return float(self.x[0])
    @property
    def r(self): return float(self.x[1])
    @property
    def d(self): return float(self.x[2])
    @property
    def beta(self): return float(self.x[3])
    @property
    def gamma(self): return float(self.x[4])
    @property
    def delta(self): return float(self.x[5])

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "lags": self.lags.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlState":
        return cls(np.array(d["x"]), np.array(d["lags"]))


@dataclass(frozen=True)
class CostConfig:
    lam: float
    target: EconomicTarget
    penalty_weights: np.ndarray = field(default_factory=lambda: np.zeros(6))
    horizon: int = 5

    def __post_init__(self):
        w = np.asarray(self.penalty_weights, dtype=float).reshape(6)
        object.__setattr__(self, "penalty_weights", w)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if np.any(w < 0):
            raise ValueError("penalty weights must be non-negative")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be at least 1")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "penalty_weights": self.penalty_weights.tolist(),
                "horizon": int(self.horizon), "target": self.target.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CostConfig":
        return cls(float(d["lambda"]), EconomicTarget.from_dict(d["target"]),
                   np.array(d["penalty_weights"]), int(d["horizon"]))


@dataclass(frozen=True)
class ProblemSpec:
    infection_model: InfectionRegressionModel
    dynamics: LogOddsDynamicsParams
    econ: EconomicModel
    feasible: FeasibleSetPCA
    cost: CostConfig
    initial_state: ControlState

    @property
    def horizon(self) -> int:
        return int(self.cost.horizon)

    def with_lambda(self, lam: float) -> "ProblemSpec":
        return replace(self, cost=replace(self.cost, lam=float(lam)))

    def with_penalty(self, weights) -> "ProblemSpec":
        w = np.broadcast_to(np.asarray(weights, dtype=float), (6,)).copy()
        return replace(self, cost=replace(self.cost, penalty_weights=w))

    def with_horizon(self, horizon: int) -> "ProblemSpec":
        return replace(self, cost=replace(self.cost, horizon=int(horizon)))

    def to_dict(self) -> dict:
        return {
            "version": SPEC_VERSION,
            "infection_model": self.infection_model.to_dict(),
            "dynamics": self.dynamics.to_dict(),
            "econ": self.econ.to_dict(),
            "feasible": self.feasible.to_dict(),
            "cost": self.cost.to_dict(),
            "initial_state": self.initial_state.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        if d.get("version") != SPEC_VERSION:
            raise ValueError(f"unsupported problem spec version {d.get('version')!r}")
        return cls(
            InfectionRegressionModel.from_dict(d["infection_model"]),
            LogOddsDynamicsParams.from_dict(d["dynamics"]),
            EconomicModel.from_dict(d["econ"]),
            FeasibleSetPCA.from_dict(d["feasible"]),
            CostConfig.from_dict(d["cost"]),
            ControlState.from_dict(d["initial_state"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        return cls.from_dict(json.loads(text))


def step_arrays(spec: ProblemSpec, x, lags, alpha, eta):
    """One batched transition.

    Returns ``(x_next, lags_next, cache)``; ``cache`` holds intermediates
    needed for reverse-mode differentiation.
    """
    x = np.asarray(x, dtype=float)
    i, r, d = x[:, 0], x[:, 1], x[:, 2]
    gamma, delta = x[:, 4], x[:, 5]
    dyn = spec.dynamics
    abar = (lags.sum(axis=1) + alpha) / (N_LAGS + 1)
    beta_n = spec.infection_model.c0 + abar @ spec.infection_model.c_array \
        + dyn.sigma_beta * eta[:, 0]
    g_mult = 1.0 + dyn.mu_gamma + dyn.sigma_gamma * eta[:, 1]
    d_mult = 1.0 + dyn.mu_delta + dyn.sigma_delta * eta[:, 2]
    gamma_n = gamma * g_mult
    delta_n = delta * d_mult
    pb, pg, pd = sigmoid(beta_n), sigmoid(gamma_n), sigmoid(delta_n)
    s = 1.0 - i - r - d
    i_raw = i * (1.0 + s * pb - pg - pd)
    i_n = np.maximum(i_raw, 0.0)
    r_n = r + i * pg
    d_n = d + i * pd
    x_next = np.column_stack([i_n, r_n, d_n, beta_n, gamma_n, delta_n])
    lags_next = np.concatenate([lags[:, 1:], alpha[:, None, :]], axis=1)
    cache = dict(i=i, s=s, pb=pb, pg=pg, pd=pd, i_raw=i_raw,
                 g_mult=g_mult, d_mult=d_mult)
    return x_next, lags_next, cache


def _penalty_arrays(alpha, feasible: FeasibleSetPCA, weights):
    excess = feasible.excess(alpha)
    return (excess ** 2) @ weights, excess


def _values(spec, alpha, x_next):
    return spec.econ.predict(alpha, x_next[:, 0], x_next[:, 1], x_next[:, 2])


@dataclass(frozen=True)
class Rollout:
    """Batched trajectory of a policy; arrays are indexed (path, step)."""

    betas: np.ndarray        # log-odds of infection after each step
    values: np.ndarray       # predicted economic value after each step
    controls: np.ndarray     # (paths, steps, 6) applied controls
    running: np.ndarray      # unpenalised running cost
    penalties: np.ndarray
    states: np.ndarray       # (paths, steps + 1, 6) X along the path

    @property
    def totals(self) -> np.ndarray:
        return (self.running + self.penalties).sum(axis=1)


def constant_policy(alpha):
    a = np.asarray(alpha, dtype=float).reshape(6)

    def policy(step, x, lags):
        return np.broadcast_to(a, (len(x), 6)).copy()
    return policy


def rollout(spec: ProblemSpec, policy, noise) -> Rollout:
    """Roll ``policy(step, x, lags) -> alpha`` forward over ``noise`` of
    shape ``(paths, horizon, 3)`` from the problem's initial state."""
    noise = np.asarray(noise, dtype=float)
    n, h = noise.shape[0], noise.shape[1]
    x = np.broadcast_to(spec.initial_state.x, (n, 6)).copy()
    lags = np.broadcast_to(spec.initial_state.lags, (n, N_LAGS, 6)).copy()
    betas, values, running, pens = (np.empty((n, h)) for _ in range(4))
    controls = np.empty((n, h, 6))
    states = np.empty((n, h + 1, 6))
    states[:, 0] = x
    cost = spec.cost
    for k in range(h):
        alpha = np.asarray(policy(k, x, lags), dtype=float)
        x, lags, _ = step_arrays(spec, x, lags, alpha, noise[:, k])
        v = _values(spec, alpha, x)
        betas[:, k] = x[:, 3]
        values[:, k] = v
        controls[:, k] = alpha
        running[:, k] = x[:, 3] + cost.lam * (v - cost.target.value(k)) ** 2
        pens[:, k] = _penalty_arrays(alpha, spec.feasible, cost.penalty_weights)[0]
        states[:, k + 1] = x
    return Rollout(betas, values, controls, running, pens, states)


def transition(w: ControlState, alpha, eta: NoiseVector, spec: ProblemSpec) -> ControlState:
    alpha = np.asarray(alpha, dtype=float).reshape(1, 6)
    if np.abs(alpha).max() > 1.0:
        raise ValueError("controls must lie in [-1, 1]")
    e = np.array([[eta.z_beta, eta.z_gamma, eta.z_delta]])
    x, lags, _ = step_arrays(spec, w.x[None], w.lags[None], alpha, e)
    return ControlState(x[0], lags[0])


def running_cost(w_next: ControlState, alpha_applied, spec: ProblemSpec, step_index: int) -> float:
    v = spec.econ.predict(np.asarray(alpha_applied, dtype=float), w_next.i, w_next.r, w_next.d)
    return float(w_next.beta + spec.cost.lam * (v - spec.cost.target.value(step_index)) ** 2)


def feasibility_penalty(alpha, feasible: FeasibleSetPCA, penalty_weights) -> float:
    excess = feasible.excess(np.asarray(alpha, dtype=float))
    return float((excess ** 2) @ np.asarray(penalty_weights, dtype=float))


def cumulative_cost(w0: ControlState, controls, noise_path, spec: ProblemSpec) -> float:
    """Penalised cost summed along one path.

    ``controls`` is either a sequence of 6-vectors (one per step) or a
    callable ``controls(step, state) -> alpha``.
    """
    noise_path = list(noise_path)
    if len(noise_path) != spec.horizon:
        raise ValueError(f"noise path has {len(noise_path)} steps, horizon is {spec.horizon}")
    total, w = 0.0, w0
    for k, eta in enumerate(noise_path):
        alpha = controls(k, w) if callable(controls) else controls[k]
        if not isinstance(eta, NoiseVector):
            eta = NoiseVector(*map(float, eta))
        w = transition(w, alpha, eta, spec)
        total += running_cost(w, alpha, spec, k)
        total += feasibility_penalty(alpha, spec.feasible, spec.cost.penalty_weights)
    return total
