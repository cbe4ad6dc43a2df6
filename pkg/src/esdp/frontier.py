"""Efficient social-distancing frontier.

Sweeping the risk-aversion weight ``lambda`` traces a curve in the plane of
tracking error (economic coordinate) against aggregated infection rate
(public-health coordinate).  A policy is scored against the curve by the
efficiency ratio: the area ``te * rate`` of the point where the ray from
the origin through the policy meets the frontier, divided by the policy's
own area.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .control import ProblemSpec, constant_policy, rollout
from .economic import tracking_error
from .epidemic import sigmoid
from .neural import (
    NetworkLayout,
    PolicyStack,
    SolverError,
    TrainConfig,
    cross_validate_penalties,
    train,
)

log = logging.getLogger(__name__)

__all__ = [
    "FrontierError",
    "FrontierPoint",
    "Frontier",
    "PolicyEvaluation",
    "EfficiencyReport",
    "Recommendation",
    "default_lambda_grid",
    "aggregated_infection_rate",
    "evaluate_policy",
    "sweep_lambda",
    "efficiency_ratio",
    "recommend_esdp",
    "frontier_csv",
    "read_frontier_csv",
    "mean_controls_csv",
]

MOBILITY_COLUMNS = ("rr", "gp", "pa", "ts", "wp", "re")


class FrontierError(ValueError):
    pass


def default_lambda_grid(n: int = 12, low: float = 1e-3, high: float = 1e-1) -> np.ndarray:
    return np.logspace(math.log10(low), math.log10(high), n)


def aggregated_infection_rate(betas) -> float:
    """Mean over paths of ``sigmoid(mean of the path's log-odds)``.

    ``betas`` is one path of length ``h`` or an array ``(paths, h)``.
    """
    b = np.atleast_2d(np.asarray(betas, dtype=float))
    if b.shape[-1] == 0:
        raise ValueError("empty log-odds path")
    return float(np.mean(sigmoid(b.mean(axis=-1))))


@dataclass(frozen=True)
class PolicyEvaluation:
    tracking_error: float
    infection_rate: float
    mean_controls: np.ndarray    # (h, 6)


def evaluate_policy(policy, spec: ProblemSpec, eval_paths) -> PolicyEvaluation:
    """Roll ``policy`` out on every evaluation path.

    ``policy`` is a :class:`PolicyStack` or any ``policy(step, x, lags)``
    callable.  Tracking error pools every path-step return deviation into
    one RMSE.
    """
    noise = np.asarray(eval_paths, dtype=float)
    if noise.shape[1] != spec.horizon:
        raise ValueError("evaluation paths do not match the problem horizon")
    if isinstance(policy, PolicyStack):
        if policy.horizon != spec.horizon:
            raise ValueError("policy horizon does not match the problem")
        act = policy.act
    else:
        act = policy
    roll = rollout(spec, act, noise)
    return PolicyEvaluation(
        tracking_error(roll.values, spec.cost.target),
        aggregated_infection_rate(roll.betas),
        roll.controls.mean(axis=0),
    )


@dataclass
class FrontierPoint:
    lam: float
    tracking_error: float
    infection_rate: float
    mean_controls: np.ndarray | None = None
    policy: PolicyStack | None = None
    dominated: bool = False

    def __post_init__(self):
        if not self.tracking_error >= 0:
            raise ValueError("tracking error must be non-negative")
        if not 0 < self.infection_rate < 1:
            raise ValueError("infection rate must lie in (0, 1)")


@dataclass
class Frontier:
    """Frontier points in ascending ``lambda``.

    Dominated points (another point has strictly lower tracking error and
    strictly lower infection rate) are kept and flagged.
    """

    points: list
    eval_seed: int = 0
    n_eval_paths: int = 0
    failures: dict = field(default_factory=dict)    # lambda -> message
    allow_single: bool = False

    def __post_init__(self):
        pts = list(self.points)
        if len(pts) < (1 if self.allow_single else 2):
            raise FrontierError(f"a frontier needs at least 2 points, got {len(pts)}")
        lams = [p.lam for p in pts]
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise FrontierError("frontier lambdas must be strictly increasing")
        for p in pts:
            p.dominated = any(q.tracking_error < p.tracking_error
                              and q.infection_rate < p.infection_rate for q in pts)
        self.points = pts

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def non_dominated(self) -> list:
        return [p for p in self.points if not p.dominated]

    def curve(self) -> tuple:
        """Vertices of the interpolated frontier sorted by tracking error.

        Only non-dominated points are used; among points with equal
        tracking error the lowest rate is kept.
        """
        pts = sorted(self.non_dominated, key=lambda p: (p.tracking_error, p.infection_rate))
        te, rate = [], []
        for p in pts:
            if te and p.tracking_error == te[-1]:
                continue
            te.append(p.tracking_error)
            rate.append(p.infection_rate)
        return np.array(te), np.array(rate)

    def to_dict(self) -> dict:
        return {
            "eval_seed": self.eval_seed,
            "n_eval_paths": self.n_eval_paths,
            "failures": {repr(k): v for k, v in self.failures.items()},
            "points": [{
                "lambda": p.lam, "te": p.tracking_error, "infection_rate": p.infection_rate,
                "dominated": p.dominated,
                "mean_controls": None if p.mean_controls is None else p.mean_controls.tolist(),
            } for p in self.points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Frontier":
        pts = [FrontierPoint(float(e["lambda"]), float(e["te"]), float(e["infection_rate"]),
                             None if e.get("mean_controls") is None
                             else np.array(e["mean_controls"]))
               for e in d["points"]]
        return cls(pts, int(d.get("eval_seed", 0)), int(d.get("n_eval_paths", 0)),
                   allow_single=len(pts) == 1)


def sweep_lambda(spec: ProblemSpec, lambda_grid=None, train_config: TrainConfig = TrainConfig(),
                 layout: NetworkLayout = NetworkLayout(), eval_seed: int = 0,
                 n_eval_paths: int = 2048, penalty_scales=None, threads: int = 1,
                 allow_single: bool = False) -> Frontier:
    """Train and evaluate one policy per ``lambda``.

    When ``penalty_scales`` is given the penalty weights are chosen once
    by cross-validation at both ends of the grid and shared by every
    point; otherwise the problem's own weights are used.  Every policy is
    evaluated on the same noise batch drawn from ``eval_seed``.  A failed
    training run is logged and recorded in ``Frontier.failures``.
    """
    grid = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be positive and strictly ascending")
    if penalty_scales is not None:
        cv = cross_validate_penalties(spec, penalty_scales, train_config, layout,
                                      lambdas=sorted({grid[0], grid[-1]}), threads=threads)
        spec = spec.with_penalty(cv.weights)
    noise = _rng.noise_batch(eval_seed, _rng.STREAM_EVAL, n_eval_paths, spec.horizon)
    points, failures = [], {}
    for lam in grid:
        sp = spec.with_lambda(float(lam))
        try:
            stack = train(sp, layout, train_config, threads).stack
        except SolverError as exc:
            log.warning("lambda %g: %s", lam, exc)
            failures[float(lam)] = str(exc)
            continue
        ev = evaluate_policy(stack, sp, noise)
        points.append(FrontierPoint(float(lam), ev.tracking_error, ev.infection_rate,
                                    ev.mean_controls, stack))
    return Frontier(points, eval_seed, n_eval_paths, failures, allow_single)


@dataclass(frozen=True)
class EfficiencyReport:
    point_te: float
    point_rate: float
    benchmark_te: float
    benchmark_rate: float

    @property
    def pera(self) -> float:
        return self.point_te * self.point_rate

    @property
    def bepera(self) -> float:
        return self.benchmark_te * self.benchmark_rate

    @property
    def efficiency_ratio(self) -> float:
        return self.bepera / self.pera

    def to_dict(self) -> dict:
        return {"point_te": self.point_te, "point_rate": self.point_rate,
                "benchmark_te": self.benchmark_te, "benchmark_rate": self.benchmark_rate,
                "pera": self.pera, "bepera": self.bepera,
                "efficiency_ratio": self.efficiency_ratio}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _interp(te_v, rate_v, t):
    j = int(np.clip(np.searchsorted(te_v, t, side="right") - 1, 0, len(te_v) - 2))
    s = (rate_v[j + 1] - rate_v[j]) / (te_v[j + 1] - te_v[j])
    return rate_v[j] + s * (t - te_v[j]), j


def efficiency_ratio(point, frontier: Frontier, max_iter: int = 200) -> EfficiencyReport:
    """Benchmark ``point = (te, rate)`` against the frontier along its ray.

    The crossing is bracketed by bisection on the ray parameter ``k`` and
    then solved exactly on the bracketing segment.
    """
    te, rate = map(float, point)
    if not te > 0:
        raise ValueError("tracking error must be positive")
    if not 0 < rate < 1:
        raise ValueError("infection rate must lie in (0, 1)")
    te_v, rate_v = frontier.curve()

    # the ray passes exactly through a vertex
    for tv, rv in zip(te_v, rate_v):
        if (tv / te) * rate == rv:
            return EfficiencyReport(te, rate, float(tv), float(rv))
    if len(te_v) < 2:
        raise FrontierError("ray does not meet a single-vertex frontier")

    # f(k) = frontier rate at k*te minus the ray's rate; non-increasing in k
    def f(k):
        return _interp(te_v, rate_v, k * te)[0] - k * rate
    lo, hi = te_v[0] / te, te_v[-1] / te
    f_lo, f_hi = f(lo), f(hi)
    tol = 1e-12 * float(rate_v.max())
    if f_lo < -tol or f_hi > tol:
        raise FrontierError("the ray from the origin does not meet the frontier "
                            "within its tracking-error span")
    # crossing at an end vertex, up to rounding
    if f_lo <= 0:
        return EfficiencyReport(te, rate, float(te_v[0]), float(rate_v[0]))
    if f_hi >= 0:
        return EfficiencyReport(te, rate, float(te_v[-1]), float(rate_v[-1]))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    j = _interp(te_v, rate_v, 0.5 * (lo + hi) * te)[1]
    s = (rate_v[j + 1] - rate_v[j]) / (te_v[j + 1] - te_v[j])
    k = (rate_v[j] - s * te_v[j]) / (rate - s * te)
    return EfficiencyReport(te, rate, k * te, k * rate)


@dataclass
class Recommendation:
    lam: float
    point: FrontierPoint
    held_te: float
    held_rate: float
    residual: float
    retrained: int


def recommend_esdp(last_alpha, spec: ProblemSpec, frontier: Frontier,
                   train_config: TrainConfig = TrainConfig(),
                   layout: NetworkLayout = NetworkLayout(), budget: int = 6,
                   te_tol: float = 1e-9, threads: int = 1) -> Recommendation:
    """Find the frontier policy whose tracking error matches holding
    ``last_alpha`` fixed over the horizon.

    The held policy is evaluated on the frontier's evaluation batch.  If
    its tracking error coincides with a grid point (within ``te_tol``
    relative) that point is returned as is; otherwise ``lambda`` is
    bisected geometrically between the bracketing grid points, retraining
    at each iterate, for at most ``budget`` iterations.  The closest
    achieved point is returned with the remaining residual.
    """
    noise = _rng.noise_batch(frontier.eval_seed, _rng.STREAM_EVAL,
                             frontier.n_eval_paths, spec.horizon)
    held = evaluate_policy(constant_policy(last_alpha), spec, noise)
    target = held.tracking_error
    pts = frontier.non_dominated
    tes = np.array([p.tracking_error for p in pts])
    scale = max(abs(target), 1e-300)
    for p in pts:
        if abs(p.tracking_error - target) <= te_tol * scale:
            return Recommendation(p.lam, p, target, held.infection_rate,
                                  p.tracking_error - target, 0)
    if not tes.min() <= target <= tes.max():
        raise FrontierError(f"held policy tracking error {target:.6g} lies outside the "
                            f"frontier span [{tes.min():.6g}, {tes.max():.6g}]")
    # tracking error falls as lambda grows; bracket with lo above, hi below target
    lo = max((p for p in pts if p.tracking_error > target), key=lambda p: p.lam)
    hi = min((p for p in pts if p.tracking_error < target and p.lam > lo.lam),
             key=lambda p: p.lam, default=None)
    if hi is None:
        raise FrontierError("no frontier points bracket the held tracking error")
    best = min((lo, hi), key=lambda p: abs(p.tracking_error - target))
    lam_lo, lam_hi = lo.lam, hi.lam
    retrained = 0
    for _ in range(budget):
        lam = math.sqrt(lam_lo * lam_hi)
        sp = spec.with_lambda(lam)
        stack = train(sp, layout, train_config, threads).stack
        retrained += 1
        ev = evaluate_policy(stack, sp, noise)
        p = FrontierPoint(lam, ev.tracking_error, ev.infection_rate, ev.mean_controls, stack)
        if abs(p.tracking_error - target) < abs(best.tracking_error - target):
            best = p
        if abs(p.tracking_error - target) <= te_tol * scale:
            break
        if p.tracking_error > target:
            lam_lo = lam
        else:
            lam_hi = lam
    return Recommendation(best.lam, best, target, held.infection_rate,
                          best.tracking_error - target, retrained)


def frontier_csv(frontier: Frontier) -> str:
    buf = io.StringIO()
    buf.write("lambda,te,infection_rate,dominated_flag\n")
    for p in frontier.points:
        buf.write(f"{p.lam!r},{p.tracking_error!r},{p.infection_rate!r},{int(p.dominated)}\n")
    return buf.getvalue()


def read_frontier_csv(text: str, eval_seed: int = 0, n_eval_paths: int = 0) -> Frontier:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "lambda,te,infection_rate,dominated_flag":
        raise FrontierError("not a frontier CSV (bad header)")
    pts = []
    for n, ln in enumerate(lines[1:], start=2):
        try:
            lam, te, rate, _ = ln.split(",")
            pts.append(FrontierPoint(float(lam), float(te), float(rate)))
        except ValueError as exc:
            raise FrontierError(f"line {n}: {exc}") from None
    return Frontier(pts, eval_seed, n_eval_paths, allow_single=len(pts) == 1)


def mean_controls_csv(frontier: Frontier) -> str:
    buf = io.StringIO()
    buf.write("lambda,step," + ",".join(MOBILITY_COLUMNS) + "\n")
    for p in frontier.points:
        if p.mean_controls is None:
            continue
        for k, row in enumerate(p.mean_controls):
            buf.write(f"{p.lam!r},{k + 1}," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()
