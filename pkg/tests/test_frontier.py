import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from esdp import rng
from esdp.control import constant_policy
from esdp.frontier import (
    Frontier,
    FrontierError,
    FrontierPoint,
    aggregated_infection_rate,
    default_lambda_grid,
    efficiency_ratio,
    evaluate_policy,
    frontier_csv,
    mean_controls_csv,
    read_frontier_csv,
    recommend_esdp,
    sweep_lambda,
)
from esdp.neural import NetworkLayout, TrainConfig
from esdp.reference import CLOSURES_MOBILITY, desk_problem
from helpers import CONVEX_CONFIG, tradeoff_fixture


def make_frontier(coords, lams=None, **kw):
    lams = lams or [10.0 ** (-3 + k) for k in range(len(coords))]
    return Frontier([FrontierPoint(l, te, r) for l, (te, r) in zip(lams, coords)], **kw)


CONVEX = [(0.010, 0.010), (0.006, 0.012), (0.004, 0.016), (0.003, 0.022)]


# ---- aggregated infection rate

def test_aggregated_rate_examples():
    assert aggregated_infection_rate(np.zeros(5)) == 0.5
    assert aggregated_infection_rate(np.full(5, -1.9459101)) == pytest.approx(0.125, abs=1e-8)
    # per-path sigmoid of the mean, then the mean over paths
    two = np.array([[0.0] * 5, [math.log(3.0)] * 5])
    assert aggregated_infection_rate(two) == pytest.approx((0.5 + 0.75) / 2, abs=1e-15)
    with pytest.raises(ValueError):
        aggregated_infection_rate(np.zeros((2, 0)))


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.randoms())
def test_aggregated_rate_permutation_invariant(betas, rnd):
    shuffled = list(betas)
    rnd.shuffle(shuffled)
    assert aggregated_infection_rate(shuffled) == pytest.approx(
        aggregated_infection_rate(betas), abs=1e-15)


# ---- evaluation

def test_evaluate_without_volatility_pools_identical_paths():
    from dataclasses import replace
    from esdp.epidemic import LogOddsDynamicsParams
    spec = replace(desk_problem(), dynamics=LogOddsDynamicsParams(0.0, 0.0, 0.0, 0.0, 0.0))
    pol = constant_policy(np.array(CLOSURES_MOBILITY) + 0.1)
    many = evaluate_policy(pol, spec, rng.noise_batch(0, rng.STREAM_EVAL, 32, 5))
    one = evaluate_policy(pol, spec, rng.noise_batch(9, rng.STREAM_EVAL, 1, 5))
    assert many.tracking_error == pytest.approx(one.tracking_error, rel=1e-13)
    assert many.infection_rate == pytest.approx(one.infection_rate, rel=1e-13)


def test_evaluate_is_seed_deterministic():
    spec = desk_problem()
    pol = constant_policy(CLOSURES_MOBILITY)
    a = evaluate_policy(pol, spec, rng.noise_batch(4, rng.STREAM_EVAL, 64, 5))
    b = evaluate_policy(pol, spec, rng.noise_batch(4, rng.STREAM_EVAL, 64, 5))
    assert a.tracking_error == b.tracking_error and a.infection_rate == b.infection_rate
    assert a.mean_controls.shape == (5, 6)
    with pytest.raises(ValueError):
        evaluate_policy(pol, spec, rng.noise_batch(4, rng.STREAM_EVAL, 4, 3))


# ---- frontier structure

def test_frontier_validation_and_domination():
    fr = make_frontier([(0.01, 0.01), (0.02, 0.02), (0.005, 0.03)])
    assert [p.dominated for p in fr.points] == [False, True, False]
    te, rate = fr.curve()
    assert te.tolist() == [0.005, 0.01] and rate.tolist() == [0.03, 0.01]
    with pytest.raises(FrontierError):
        make_frontier([(0.01, 0.01)])
    assert len(make_frontier([(0.01, 0.01)], allow_single=True).points) == 1
    with pytest.raises(FrontierError):
        make_frontier([(0.01, 0.01), (0.005, 0.02)], lams=[0.1, 0.01])
    with pytest.raises(ValueError):
        FrontierPoint(0.1, -1.0, 0.5)
    with pytest.raises(ValueError):
        FrontierPoint(0.1, 0.1, 1.0)


def test_default_grid():
    g = default_lambda_grid()
    assert len(g) == 12
    assert g[0] == pytest.approx(1e-3) and g[-1] == pytest.approx(1e-1)
    assert np.allclose(np.diff(np.log(g)), np.log(100) / 11)


def test_frontier_csv_round_trip():
    fr = make_frontier(CONVEX + [(0.02, 0.03)])
    text = frontier_csv(fr)
    assert text.splitlines()[0] == "lambda,te,infection_rate,dominated_flag"
    assert text.splitlines()[-1].endswith(",1")
    back = read_frontier_csv(text)
    assert frontier_csv(back) == text
    with pytest.raises(FrontierError):
        read_frontier_csv("a,b\n1,2\n")
    with pytest.raises(FrontierError, match="line 2"):
        read_frontier_csv("lambda,te,infection_rate,dominated_flag\n0.1,x,0.2,0\n")


def test_frontier_json_round_trip():
    fr = make_frontier(CONVEX, eval_seed=5, n_eval_paths=99)
    fr.points[1].mean_controls = np.arange(12.0).reshape(2, 6) / 100
    back = Frontier.from_dict(fr.to_dict())
    assert back.to_dict() == fr.to_dict()
    assert mean_controls_csv(back).splitlines()[0] == "lambda,step,rr,gp,pa,ts,wp,re"
    assert len(mean_controls_csv(back).splitlines()) == 3


# ---- efficiency ratio

@pytest.mark.parametrize("k", range(len(CONVEX)))
def test_efficiency_ratio_of_own_vertex(k):
    fr = make_frontier(CONVEX)
    assert efficiency_ratio(CONVEX[k], fr).efficiency_ratio == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("k", range(len(CONVEX)))
def test_efficiency_ratio_double_vertex_is_quarter(k):
    fr = make_frontier(CONVEX)
    te, rate = CONVEX[k]
    rep = efficiency_ratio((2 * te, 2 * rate), fr)
    assert rep.efficiency_ratio == 0.25
    assert (rep.benchmark_te, rep.benchmark_rate) == (te, rate)


def test_efficiency_ratio_on_a_segment():
    fr = make_frontier([(0.01, 0.01), (0.002, 0.03)])
    rep = efficiency_ratio((0.01, 0.02), fr)
    # frontier r = 0.035 - 2.5 te meets the ray r = 2 te at te = 0.035/4.5
    te_star = 0.035 / 4.5
    assert rep.benchmark_te == pytest.approx(te_star, rel=1e-12)
    assert rep.efficiency_ratio == pytest.approx(te_star * 2 * te_star / 0.0002, rel=1e-12)
    assert 0 <= rep.efficiency_ratio <= 1
    assert set(rep.to_dict()) == {"point_te", "point_rate", "benchmark_te", "benchmark_rate",
                                  "pera", "bepera", "efficiency_ratio"}


@given(st.floats(0.01, 100), st.floats(0.01, 10), st.floats(1.0, 3.0), st.floats(0.0, 1.0))
def test_efficiency_ratio_scale_free(sx, sy, stretch, where):
    # a point on or beyond the frontier, on a ray through an interior segment
    te_v = np.array([c[0] for c in CONVEX])[::-1]
    rate_v = np.array([c[1] for c in CONVEX])[::-1]
    t = te_v[0] + where * (te_v[-1] - te_v[0])
    point = (stretch * t, stretch * np.interp(t, te_v, rate_v))
    base = efficiency_ratio(point, make_frontier(CONVEX)).efficiency_ratio
    scaled = make_frontier([(sx * a, sy * b) for a, b in CONVEX])
    er = efficiency_ratio((sx * point[0], sy * point[1]), scaled).efficiency_ratio
    assert er == pytest.approx(base, abs=1e-9)
    assert er == pytest.approx(1 / stretch ** 2, abs=1e-9)


def test_efficiency_ratio_errors():
    fr = make_frontier(CONVEX)
    with pytest.raises(FrontierError):
        efficiency_ratio((0.1, 0.0001), fr)        # ray passes beside the frontier
    with pytest.raises(ValueError):
        efficiency_ratio((0.0, 0.1), fr)


# ---- sweep

def test_sweep_matches_analytic_optima_and_orders_points():
    spec, optimum = tradeoff_fixture()
    fr = sweep_lambda(spec, [1e-5, 1e-3], CONVEX_CONFIG, n_eval_paths=64)
    assert not any(p.dominated for p in fr.points)
    for p in fr.points:
        _, te, rate = optimum(p.lam)
        assert p.tracking_error == pytest.approx(te, rel=1e-2)
        assert p.infection_rate == pytest.approx(rate, rel=1e-2)
    a, b = fr.points
    assert b.tracking_error <= a.tracking_error + 1e-3
    assert b.infection_rate >= a.infection_rate - 1e-3


def test_sweep_is_deterministic_across_threads():
    spec, _ = tradeoff_fixture()
    cfg = TrainConfig(learning_rate=1e-3, n_train_paths=256, epochs=3, n_heldout_paths=64,
                      n_pilot_paths=32)
    a = sweep_lambda(spec, [1e-5, 1e-3], cfg, n_eval_paths=300)
    b = sweep_lambda(spec, [1e-5, 1e-3], cfg, n_eval_paths=300, threads=4)
    assert frontier_csv(a) == frontier_csv(b)


def test_sweep_single_lambda():
    spec, _ = tradeoff_fixture()
    cfg = TrainConfig(learning_rate=1e-3, n_train_paths=64, epochs=1, n_heldout_paths=32,
                      n_pilot_paths=16)
    with pytest.raises(FrontierError):
        sweep_lambda(spec, [1e-3], cfg, n_eval_paths=16)
    fr = sweep_lambda(spec, [1e-3], cfg, n_eval_paths=16, allow_single=True)
    assert len(fr.points) == 1
    with pytest.raises(ValueError):
        sweep_lambda(spec, [], cfg)
    with pytest.raises(ValueError):
        sweep_lambda(spec, [1e-2, 1e-3], cfg)


# ---- recommendation

def _held(spec, alpha, n=64, seed=0):
    return evaluate_policy(constant_policy(alpha), spec,
                           rng.noise_batch(seed, rng.STREAM_EVAL, n, spec.horizon))


def test_recommend_coincident_grid_point_needs_no_retraining():
    spec = desk_problem()
    alpha = np.array(CLOSURES_MOBILITY) + 0.05
    held = _held(spec, alpha)
    t, r = held.tracking_error, held.infection_rate
    fr = make_frontier([(2 * t, r / 2), (t, r), (t / 2, 2 * r)], eval_seed=0, n_eval_paths=64)
    rec = recommend_esdp(alpha, spec, fr, CONVEX_CONFIG)
    assert rec.retrained == 0 and rec.lam == fr.points[1].lam
    assert rec.residual == 0.0
    assert rec.point.infection_rate <= rec.held_rate


def test_recommend_target_outside_span():
    spec = desk_problem()
    alpha = np.array(CLOSURES_MOBILITY)
    t = _held(spec, alpha).tracking_error
    fr = make_frontier([(t / 2, 0.01), (t / 4, 0.02)], eval_seed=0, n_eval_paths=64)
    with pytest.raises(FrontierError, match="outside"):
        recommend_esdp(alpha, spec, fr, CONVEX_CONFIG)


def test_recommend_bisects_within_budget():
    spec, optimum = tradeoff_fixture()
    alpha = optimum(1e-4)[0]                   # hold the lambda = 1e-4 optimum fixed
    held = _held(spec, alpha)
    fr = make_frontier([optimum(1e-5)[1:], optimum(1e-3)[1:]], lams=[1e-5, 1e-3],
                       eval_seed=0, n_eval_paths=64)
    rec = recommend_esdp(alpha, spec, fr, CONVEX_CONFIG, budget=2)
    assert 1 <= rec.retrained <= 2
    assert 1e-5 < rec.lam < 1e-3
    # the first geometric midpoint is exactly 1e-4, whose optimum is the held policy
    assert rec.lam == pytest.approx(1e-4)
    assert abs(rec.residual) <= 1e-2 * held.tracking_error
    assert rec.point.infection_rate <= held.infection_rate + 1e-3
