"""Long-horizon Monte Carlo under fixed mobility.

Holding the mobility vector constant makes the five-day average equal to
it from the first day, so each path is a plain stochastic SIRD recursion.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .epidemic import InfectionRegressionModel, LogOddsDynamicsParams, sird_step_arrays
from .reference import (
    CLOSURES_MOBILITY,
    MID2020_DELTA,
    MID2020_GAMMA,
    MID2020_IRD,
    US_JUN21_DYNAMICS,
    US_JUN21_INFECTION,
)

__all__ = [
    "PRESETS",
    "preset_mobility",
    "ScenarioSpec",
    "Ensemble",
    "QuantileCurves",
    "simulate",
    "quantile_curves",
]

# median mobility over four stretches of early 2020
PRESETS = {
    "baseline": (0.0,) * 6,
    "alerts": (0.07, 0.02, 0.12, 0.02, 0.02, -0.01),
    "school": (0.055, 0.09, 0.15, -0.045, -0.015, 0.01),
    "school_work": CLOSURES_MOBILITY,
}

BLOCK = 1024   # paths per work unit


def preset_mobility(name: str) -> np.ndarray:
    try:
        return np.array(PRESETS[name], dtype=float)
    except KeyError:
        raise ValueError(f"unknown mobility preset {name!r}; "
                         f"choose from {', '.join(PRESETS)}") from None


@dataclass(frozen=True)
class ScenarioSpec:
    fixed_mobility: tuple
    horizon_days: int = 365
    n_paths: int = 10000
    seed: int = 0
    initial_ird: tuple = MID2020_IRD
    gamma0: float = MID2020_GAMMA
    delta0: float = MID2020_DELTA
    infection_model: InfectionRegressionModel = US_JUN21_INFECTION
    dynamics: LogOddsDynamicsParams = US_JUN21_DYNAMICS

    def __post_init__(self):
        a = tuple(float(v) for v in np.asarray(self.fixed_mobility, dtype=float).reshape(6))
        object.__setattr__(self, "fixed_mobility", a)
        if int(self.horizon_days) < 1:
            raise ValueError("horizon must be at least one day")
        if int(self.n_paths) < 1:
            raise ValueError("need at least one path")
        i, r, d = self.initial_ird
        if min(i, r, d) < 0 or i + r + d > 1:
            raise ValueError("initial I, R, D must be non-negative and sum to at most 1")


@dataclass(frozen=True)
class Ensemble:
    """Simulated compartments, arrays of shape ``(paths, days + 1)``."""

    i: np.ndarray
    r: np.ndarray
    d: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return 1.0 - self.i - self.r - self.d

    @property
    def n_paths(self) -> int:
        return self.i.shape[0]

    def save(self, path) -> None:
        np.savez_compressed(path, i=self.i, r=self.r, d=self.d)


def _simulate_block(spec: ScenarioSpec, first: int, count: int):
    h = int(spec.horizon_days)
    z = _rng.noise_batch(spec.seed, _rng.STREAM_SCENARIO, count, h, first)
    dyn = spec.dynamics
    mean_beta = spec.infection_model.mean_beta(np.array(spec.fixed_mobility))
    i0, r0, d0 = spec.initial_ird
    out = np.empty((3, count, h + 1))
    i, r, d = (np.full(count, float(v)) for v in (i0, r0, d0))
    gamma = np.full(count, float(spec.gamma0))
    delta = np.full(count, float(spec.delta0))
    out[:, :, 0] = i, r, d
    for t in range(h):
        beta = mean_beta + dyn.sigma_beta * z[:, t, 0]
        gamma = gamma * (1.0 + dyn.mu_gamma + dyn.sigma_gamma * z[:, t, 1])
        delta = delta * (1.0 + dyn.mu_delta + dyn.sigma_delta * z[:, t, 2])
        _, i, r, d = sird_step_arrays(i, r, d, beta, gamma, delta)
        out[:, :, t + 1] = i, r, d
    return out


def simulate(spec: ScenarioSpec, threads: int = 1) -> Ensemble:
    """Simulate ``spec.n_paths`` independent paths.

    Each path draws from its own counter-based stream, so the ensemble is
    identical for every thread count.
    """
    n = int(spec.n_paths)
    starts = list(range(0, n, BLOCK))
    work = [(a, min(BLOCK, n - a)) for a in starts]
    if threads > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda w: _simulate_block(spec, *w), work))
    else:
        parts = [_simulate_block(spec, *w) for w in work]
    arr = np.concatenate(parts, axis=1)
    return Ensemble(arr[0], arr[1], arr[2])


def _label(p: float) -> str:
    return "q" + f"{100 * p:.10g}".replace(".", "_")


@dataclass(frozen=True)
class QuantileCurves:
    probabilities: tuple
    i: np.ndarray    # (len(probabilities), days + 1)
    r: np.ndarray
    d: np.ndarray

    def to_csv(self) -> str:
        labels = [_label(p) for p in self.probabilities]
        cols = [f"{c}_{q}" for c in "ird" for q in labels]
        buf = io.StringIO()
        buf.write("day," + ",".join(cols) + "\n")
        table = np.vstack([self.i, self.r, self.d])
        for day in range(table.shape[1]):
            buf.write(f"{day}," + ",".join(repr(float(v)) for v in table[:, day]) + "\n")
        return buf.getvalue()


def quantile_curves(ensemble: Ensemble, probabilities=(0.45, 0.5, 0.55)) -> QuantileCurves:
    """Per-day empirical quantiles with linear interpolation between order
    statistics."""
    if ensemble.n_paths == 0:
        raise ValueError("empty ensemble")
    p = tuple(float(v) for v in probabilities)
    if not p or any(not 0 < v < 1 for v in p):
        raise ValueError("probabilities must lie in (0, 1)")
    q = [np.quantile(x, p, axis=0, method="linear") for x in (ensemble.i, ensemble.r, ensemble.d)]
    return QuantileCurves(p, *q)
