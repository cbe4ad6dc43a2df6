"""Fixtures shared by the unit and acceptance suites."""

from dataclasses import replace

import numpy as np

from esdp import rng
from esdp.calibration import FeasibleSetPCA
from esdp.epidemic import LogOddsDynamicsParams
from esdp.neural import (
    NetworkLayout,
    TrainConfig,
    fit_normalizer,
    init_stack,
    objective,
    objective_and_gradient,
)
from esdp.reference import US_JUN21_INFECTION, desk_problem

# (horizon, hidden activation) for the three gradient-check problems
GRADIENT_FIXTURES = [(1, "relu"), (2, "tanh"), (5, "relu")]


def unit_box(half_width=0.5):
    return FeasibleSetPCA(np.eye(6), np.full(6, -half_width), np.full(6, half_width),
                          np.zeros(6))


def convex_fixture(penalty=100.0, sigma_beta=0.0, half_width=0.5):
    """One-step, lambda = 0 problem whose optimal control is known in closed form.

    The cost is c0 + c . (lags + alpha) / 5 + sigma_beta z plus the box
    penalty, so each coordinate trades the linear pull c_j / 5 against
    penalty * excess_j^2.  Returns ``(spec, alpha_star)``.
    """
    base = desk_problem(lam=0.0, horizon=1)
    spec = replace(base, feasible=unit_box(half_width),
                   dynamics=LogOddsDynamicsParams(0.0, 0.0, 0.0, 0.0, sigma_beta))
    spec = spec.with_penalty(penalty)
    c = np.asarray(US_JUN21_INFECTION.c)
    star = np.where(c < 0, half_width, -half_width) - c / (10.0 * penalty)
    return spec, star


CONVEX_CONFIG = TrainConfig(learning_rate=1e-3, n_train_paths=1024, epochs=50,
                            master_seed=0, n_heldout_paths=256, n_pilot_paths=64)


def gradient_check(h, activation, seed=3, n_paths=8, step=1e-5, width=8):
    """Worst ratio |fd - reverse| / max(1e-4 * max(|fd|, |reverse|), 1e-7).

    Values at most 1 mean every coordinate agrees within 1e-4 relative
    with a 1e-7 absolute floor.
    """
    spec = desk_problem(lam=0.01, horizon=h, penalty=50.0)
    stack = init_stack(NetworkLayout(hidden_width=width, hidden_activation=activation), h, seed)
    stack.normalizer = fit_normalizer(stack, spec, rng.noise_batch(seed, rng.STREAM_PILOT, 64, h))
    noise = rng.noise_batch(seed, rng.STREAM_TRAIN, n_paths, h)
    _, grads = objective_and_gradient(stack, spec, noise)
    worst = 0.0
    for p, g in zip(stack.params(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            jp = objective(stack, spec, noise)
            p[idx] = old - step
            jm = objective(stack, spec, noise)
            p[idx] = old
            fd = (jp - jm) / (2 * step)
            a = g[idx]
            worst = max(worst, abs(fd - a) / max(1e-4 * max(abs(fd), abs(a)), 1e-7))
    return worst


def tradeoff_fixture(kappa_rr=1000.0):
    """One-step problem with an analytic optimum for every ``lambda``.

    The economic value depends on the first control only, so that
    coordinate balances c_1 / 5 against lambda * kappa^2 * a^2 and sits at
    a_1 = -c_1 / (10 lambda kappa^2), inside the box for the lambdas used
    in tests.  The other coordinates behave as in :func:`convex_fixture`.
    Returns ``(spec, optimum)`` where ``optimum(lam)`` gives
    ``(alpha_star, tracking_error, infection_rate)``.
    """
    from esdp.economic import EconomicModel, EconomicTarget
    from esdp.epidemic import sigmoid

    spec, star = convex_fixture()
    spx0 = 1000.0
    econ = EconomicModel(spx0, (kappa_rr, 0.0, 0.0, 0.0, 0.0, 0.0), 0.0, 0.0, 0.0)
    spec = replace(spec, econ=econ, cost=replace(spec.cost, target=EconomicTarget(spx0)))
    inf = spec.infection_model
    lags = spec.initial_state.lags

    def optimum(lam):
        a = star.copy()
        a[0] = -inf.c[0] / (10.0 * lam * kappa_rr ** 2)
        te = abs(kappa_rr * a[0]) / spx0
        beta = inf.c0 + (lags.sum(axis=0) + a) @ inf.c_array / 5
        return a, te, float(sigmoid(beta))
    return spec, optimum
