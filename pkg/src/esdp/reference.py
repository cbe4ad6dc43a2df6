"""US model estimates fitted on data up to 2020-06-21.

These are handy as generator truth in tests and as defaults for scenario
runs when no calibration output is supplied.
"""

import numpy as np

from .economic import EconomicModel
from .epidemic import InfectionRegressionModel, LogOddsDynamicsParams

MOBILITY_NAMES = ("rr", "gp", "pa", "ts", "wp", "re")

US_JUN21_INFECTION = InfectionRegressionModel(
    c0=0.3282,
    c=(-16.9957, 4.4961, -1.4419, 28.5379, 3.7798, 34.6980),
)
US_JUN21_INFECTION_SE = (0.2313, 3.0850, 1.2010, 0.5302, 4.3214, 3.5796, 7.7061)

US_JUN21_DYNAMICS = LogOddsDynamicsParams(
    mu_gamma=0.0176,
    sigma_gamma=0.1919,
    mu_delta=0.0061,
    sigma_delta=0.0451,
    sigma_beta=0.5166,
)

US_JUN21_ECONOMIC = EconomicModel(
    kappa0=2875.8,
    kappa=(1108.1, -1100.5, -301.0, 1001.4, -179.1, 1195.2),
    kappa_i=2.772e5,
    kappa_r=1.957e5,
    kappa_d=-2.217e6,
)

# Median mobility over the school-and-workplace-closure period (Mar 19 - Jun 21)
CLOSURES_MOBILITY = (-0.3, -0.07, 0.06, -0.42, -0.4, 0.15)

# Mid-2020 starting point for scenario and control studies.  Recovery and
# death log-odds are not tabulated; a 14-day mean infectious period and a
# 0.2% daily death rate among the infectious are used instead.
MID2020_IRD = (0.004, 0.002, 0.0004)
MID2020_GAMMA = float(np.log(1.0 / 13.0))    # logit(1/14)
MID2020_DELTA = float(np.log(0.002 / 0.998))  # logit(0.002)


def synthetic_mobility_history(n_days: int = 60, seed: int = 0, spread: float = 0.04,
                               center=CLOSURES_MOBILITY) -> np.ndarray:
    """Correlated daily mobility around ``center`` for fitting a PCA box.

    Indices move together (a shared lockdown-intensity factor) plus small
    idiosyncratic noise, which mimics the strong collinearity of real
    mobility reports.
    """
    gen = np.random.default_rng(seed)
    loading = np.array([1.0, 0.4, 0.8, 1.0, 0.9, -0.4])
    common = gen.standard_normal(n_days)[:, None] * loading
    idio = 0.35 * gen.standard_normal((n_days, 6))
    return np.clip(np.asarray(center) + spread * (common + idio), -1.0, 1.0)


def desk_problem(lam: float = 0.01, horizon: int = 5, penalty: float = 0.0,
                 history_seed: int = 0, spread: float = 0.12):
    """A small but complete control problem built from the Jun 21 estimates.

    The decision-date state is the mid-2020 point with the four lagged
    controls at the closure-period median; the PCA box is fitted to a
    synthetic 60-day mobility history around the same median.
    """
    from .calibration import fit_pca_bounds
    from .control import ControlState, CostConfig, ProblemSpec
    from .economic import EconomicTarget

    alpha = np.asarray(CLOSURES_MOBILITY)
    i, r, d = MID2020_IRD
    beta0 = float(US_JUN21_INFECTION.mean_beta(alpha))
    state = ControlState(np.array([i, r, d, beta0, MID2020_GAMMA, MID2020_DELTA]),
                         np.tile(alpha, (4, 1)))
    spx0 = float(US_JUN21_ECONOMIC.predict(alpha, i, r, d))
    feasible = fit_pca_bounds(synthetic_mobility_history(seed=history_seed, spread=spread))
    cost = CostConfig(lam, EconomicTarget(spx0), np.full(6, float(penalty)), horizon)
    return ProblemSpec(US_JUN21_INFECTION, US_JUN21_DYNAMICS, US_JUN21_ECONOMIC,
                       feasible, cost, state)
