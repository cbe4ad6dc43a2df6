"""Synthetic data drawn from the model itself.

Useful for fixtures: every series is generated from known parameters, so
fitted estimates can be compared with the truth.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .data import AlignedDataset, EpidemicTimeSeries, IndexTimeSeries, MobilityTimeSeries, moving_average
from .economic import EconomicModel
from .epidemic import (
    InfectionRegressionModel,
    LogOddsDynamicsParams,
    LogOddsSeries,
    sird_step_arrays,
)
from .reference import (
    MID2020_DELTA,
    MID2020_GAMMA,
    US_JUN21_DYNAMICS,
    US_JUN21_ECONOMIC,
    US_JUN21_INFECTION,
    synthetic_mobility_history,
)

__all__ = ["SyntheticPanel", "synthetic_panel", "write_panel_csvs", "log_odds_panel"]


@dataclass(frozen=True)
class SyntheticPanel:
    mobility: MobilityTimeSeries
    epidemic: EpidemicTimeSeries
    index: IndexTimeSeries
    beta: np.ndarray     # true log-odds; entry t drives the step from day t to t + 1
    gamma: np.ndarray
    delta: np.ndarray


def synthetic_panel(n_days: int = 60, seed: int = 0, start: dt.date = dt.date(2020, 4, 1),
                    population: float = 3.3e8, initial_ird=(2e-3, 1e-3, 1e-4),
                    infection: InfectionRegressionModel = US_JUN21_INFECTION,
                    dynamics: LogOddsDynamicsParams = US_JUN21_DYNAMICS,
                    econ: EconomicModel = US_JUN21_ECONOMIC,
                    gamma0: float = MID2020_GAMMA, delta0: float = MID2020_DELTA,
                    index_noise: float = 20.0, mobility_spread: float = 0.12) -> SyntheticPanel:
    """Mobility, epidemic and index series for ``n_days`` epidemic dates.

    Mobility starts four days early so the moving average is defined on
    every epidemic date.  Index closes exist on weekdays only.
    """
    gen = np.random.default_rng(seed)
    mob = synthetic_mobility_history(n_days + 4, seed=seed, spread=mobility_spread)
    ma = moving_average(mob)[4:]
    mob_dates = tuple(start + dt.timedelta(days=k - 4) for k in range(n_days + 4))
    dates = mob_dates[4:]

    steps = n_days - 1
    z = gen.standard_normal((steps, 3))
    beta = infection.c0 + ma[:steps] @ infection.c_array + dynamics.sigma_beta * z[:, 0]
    gamma = gamma0 * np.cumprod(1.0 + dynamics.mu_gamma + dynamics.sigma_gamma * z[:, 1])
    delta = delta0 * np.cumprod(1.0 + dynamics.mu_delta + dynamics.sigma_delta * z[:, 2])

    ird = np.empty((n_days, 3))
    ird[0] = initial_ird
    for t in range(steps):
        _, i, r, d = sird_step_arrays(*ird[t], beta[t], gamma[t], delta[t])
        ird[t + 1] = i, r, d
    states = np.column_stack([1.0 - ird.sum(axis=1), ird])

    weekday = np.array([d.weekday() < 5 for d in dates])
    closes = econ.predict(mob[4:], ird[:, 0], ird[:, 1], ird[:, 2]) \
        + index_noise * gen.standard_normal(n_days)
    idx_dates = tuple(d for d, w in zip(dates, weekday) if w)
    return SyntheticPanel(
        MobilityTimeSeries(mob_dates, mob),
        EpidemicTimeSeries(dates, states, population),
        IndexTimeSeries(idx_dates, closes[weekday]),
        beta, gamma, delta,
    )


def write_panel_csvs(panel: SyntheticPanel, directory) -> dict:
    """Write ``mobility.csv``, ``cases.csv`` and ``index.csv``; returns their paths."""
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.csv" for k in ("mobility", "cases", "index")}
    m = panel.mobility
    lines = ["date,rr,gp,pa,ts,wp,re"]
    lines += [d.isoformat() + "," + ",".join(repr(float(v)) for v in row)
              for d, row in zip(m.dates, m.values)]
    paths["mobility"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    e = panel.epidemic
    counts = e.states[:, 1:] * e.population
    lines = ["date,active,recovered,deaths"]
    lines += [d.isoformat() + "," + ",".join(repr(float(v)) for v in row)
              for d, row in zip(e.dates, counts)]
    paths["cases"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    x = panel.index
    lines = ["date,close"] + [f"{d.isoformat()},{float(c)!r}" for d, c in zip(x.dates, x.closes)]
    paths["index"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


def log_odds_panel(n: int = 500, seed: int = 0,
                   infection: InfectionRegressionModel = US_JUN21_INFECTION,
                   dynamics: LogOddsDynamicsParams = US_JUN21_DYNAMICS,
                   gamma0: float = MID2020_GAMMA, delta0: float = MID2020_DELTA,
                   mobility_spread: float = 0.12):
    """Log-odds generated straight from the stochastic dynamics.

    Returns ``(dataset, log_odds)`` with ``n + 1`` regression pairs and
    ``n`` relative increments for gamma and delta.  The epidemic columns of the
    dataset are placeholders; only dates and moving averages are
    meaningful.  Long samples are possible here because no SIRD state has
    to stay representable.
    """
    gen = np.random.default_rng(seed)
    ma = synthetic_mobility_history(n + 1, seed=seed + 1_000_003, spread=mobility_spread)
    z = gen.standard_normal((n + 1, 3))
    beta = infection.c0 + ma @ infection.c_array + dynamics.sigma_beta * z[:, 0]
    mult_g = 1.0 + dynamics.mu_gamma + dynamics.sigma_gamma * z[:, 1]
    mult_d = 1.0 + dynamics.mu_delta + dynamics.sigma_delta * z[:, 2]
    gamma = gamma0 * np.concatenate([[1.0], np.cumprod(mult_g[:n])])
    delta = delta0 * np.concatenate([[1.0], np.cumprod(mult_d[:n])])
    dates = tuple(dt.date(2020, 1, 1) + dt.timedelta(days=k) for k in range(n + 2))
    placeholder = np.tile([1.0, 0.0, 0.0, 0.0], (n + 2, 1))
    ds = AlignedDataset(dates, np.vstack([ma, ma[-1:]]), np.vstack([ma, ma[-1:]]),
                        placeholder, np.full(n + 2, np.nan))
    lo = LogOddsSeries(beta, gamma, delta, np.zeros((n + 1, 3), dtype=bool))
    return ds, lo
