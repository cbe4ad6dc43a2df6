"""Feedforward policy networks trained through the unrolled stochastic dynamics.

One network per horizon step maps the 30-dimensional state to a control
in (-1, 1)^6.  The mean penalised cost over a batch of noise paths is
differentiated exactly by a hand-written reverse sweep over the whole
rollout (network layers, SIRD step, log-odds dynamics, running cost and
PCA penalty), and the parameters are updated with Adam.
"""

from __future__ import annotations

import copy
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .control import N_LAGS, STATE_DIM, ProblemSpec, rollout, step_arrays

__all__ = [
    "SolverError",
    "NetworkLayout",
    "PolicyNetwork",
    "Normalizer",
    "PolicyStack",
    "TrainConfig",
    "AdamState",
    "TrainResult",
    "CrossValidation",
    "init_stack",
    "forward",
    "objective_and_gradient",
    "adam_step",
    "fit_normalizer",
    "train",
    "cross_validate_penalties",
]

log = logging.getLogger(__name__)

REDUCTION_BLOCK = 128
STACK_VERSION = 1


class SolverError(RuntimeError):
    """Numerical failure while evaluating or training a policy."""


@dataclass(frozen=True)
class NetworkLayout:
    input_dim: int = STATE_DIM
    hidden_layers: int = 2
    hidden_width: int = 64
    output_dim: int = 6
    hidden_activation: str = "relu"

    def __post_init__(self):
        if min(self.input_dim, self.hidden_width, self.output_dim) < 1 or self.hidden_layers < 0:
            raise ValueError("layer sizes must be positive")
        if self.hidden_activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {self.hidden_activation!r}")

    @property
    def sizes(self) -> list:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


@dataclass
class PolicyNetwork:
    """Weights ``W[l]`` have shape ``(fan_out, fan_in)``."""

    weights: list
    biases: list
    activation: str = "relu"

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, flat):
        self.weights = list(flat[0::2])
        self.biases = list(flat[1::2])


@dataclass
class Normalizer:
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, dim: int = STATE_DIM) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, v):
        return (v - self.shift) / self.scale


@dataclass
class PolicyStack:
    networks: list
    normalizer: Normalizer
    layout: NetworkLayout

    @property
    def horizon(self) -> int:
        return len(self.networks)

    def params(self) -> list:
        return [p for net in self.networks for p in net.params()]

    def set_params(self, flat):
        per = 2 * (self.layout.hidden_layers + 1)
        for k, net in enumerate(self.networks):
            net.set_params(flat[k * per:(k + 1) * per])

    def copy(self) -> "PolicyStack":
        return copy.deepcopy(self)

    def act(self, step, x, lags) -> np.ndarray:
        v = np.concatenate([x, lags.reshape(len(x), 6 * N_LAGS)], axis=1)
        o, _ = _net_forward(self.networks[step], self.normalizer(v))
        return np.tanh(o)

    __call__ = act

    def to_dict(self) -> dict:
        def arr(a):
            return {"shape": list(a.shape), "data": a.ravel().tolist()}
        return {
            "version": STACK_VERSION,
            "layout": self.layout.__dict__.copy(),
            "normalizer": {"shift": self.normalizer.shift.tolist(),
                           "scale": self.normalizer.scale.tolist()},
            "networks": [{"weights": [arr(w) for w in n.weights],
                          "biases": [arr(b) for b in n.biases]} for n in self.networks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyStack":
        if d.get("version") != STACK_VERSION:
            raise ValueError(f"unsupported policy stack version {d.get('version')!r}")
        layout = NetworkLayout(**d["layout"])

        def arr(e):
            return np.array(e["data"], dtype=float).reshape(e["shape"])
        nets = [PolicyNetwork([arr(w) for w in n["weights"]], [arr(b) for b in n["biases"]],
                              layout.hidden_activation) for n in d["networks"]]
        norm = Normalizer(np.array(d["normalizer"]["shift"]), np.array(d["normalizer"]["scale"]))
        return cls(nets, norm, layout)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PolicyStack":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    n_train_paths: int = 20000
    epochs: int = 100
    master_seed: int = 0
    n_heldout_paths: int = 2048
    n_pilot_paths: int = 512

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.epsilon > 0):
            raise ValueError("learning rate and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if min(self.batch_size, self.n_train_paths, self.n_heldout_paths,
               self.n_pilot_paths) < 1 or self.epochs < 0:
            raise ValueError("path counts and batch size must be positive")


def init_stack(layout: NetworkLayout, horizon: int, seed: int) -> PolicyStack:
    """Glorot-uniform weights, zero biases, identity input normaliser."""
    gen = _rng.generator(seed, _rng.STREAM_INIT)
    sizes = layout.sizes
    nets = []
    for _ in range(horizon):
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(gen.uniform(-a, a, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        nets.append(PolicyNetwork(ws, bs, layout.hidden_activation))
    return PolicyStack(nets, Normalizer.identity(layout.input_dim), layout)


def _net_forward(net: PolicyNetwork, u):
    acts, pres = [u], []
    g = u
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        pre = g @ w.T + b
        g = np.maximum(pre, 0.0) if net.activation == "relu" else np.tanh(pre)
        pres.append(pre)
        acts.append(g)
    out = g @ net.weights[-1].T + net.biases[-1]
    return out, (acts, pres)


def _net_backward(net: PolicyNetwork, cache, g_out):
    """Returns (gradient wrt input, flat parameter gradients)."""
    acts, pres = cache
    n_layers = len(net.weights)
    grads = [None] * (2 * n_layers)
    g = g_out
    for l in range(n_layers - 1, -1, -1):
        if l < n_layers - 1:
            if net.activation == "relu":
                g = g * (pres[l] > 0.0)
            else:
                g = g * (1.0 - acts[l + 1] ** 2)
        grads[2 * l] = g.T @ acts[l]
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ net.weights[l]
    return g, grads


def forward(network: PolicyNetwork, w, normalizer: Normalizer | None = None) -> np.ndarray:
    """Control for a single 30-dimensional state vector."""
    v = np.asarray(getattr(w, "as_vector", lambda: w)(), dtype=float)
    if v.shape != (network.weights[0].shape[1],):
        raise ValueError(f"state has {v.size} entries, network expects "
                         f"{network.weights[0].shape[1]}")
    u = normalizer(v) if normalizer is not None else v
    o, _ = _net_forward(network, u[None])
    return np.tanh(o[0])


def _chunk_objective(stack: PolicyStack, spec: ProblemSpec, noise, need_grad=True):
    """Summed cost over a chunk of paths and, optionally, its gradient."""
    m, h = noise.shape[0], noise.shape[1]
    cost = spec.cost
    econ = spec.econ
    feas = spec.feasible
    weights = cost.penalty_weights
    x = np.broadcast_to(spec.initial_state.x, (m, 6)).copy()
    lags = np.broadcast_to(spec.initial_state.lags, (m, N_LAGS, 6)).copy()
    tape = []
    total = 0.0
    for k in range(h):
        v = np.concatenate([x, lags.reshape(m, 6 * N_LAGS)], axis=1)
        o, ncache = _net_forward(stack.networks[k], stack.normalizer(v))
        alpha = np.tanh(o)
        x_next, lags_next, scache = step_arrays(spec, x, lags, alpha, noise[:, k])
        e = econ.predict(alpha, x_next[:, 0], x_next[:, 1], x_next[:, 2]) - cost.target.value(k)
        excess = feas.excess(alpha)
        c = x_next[:, 3] + cost.lam * e ** 2 + (excess ** 2) @ weights
        if not np.all(np.isfinite(c)):
            raise SolverError(f"non-finite cost at horizon step {k}")
        total += float(c.sum())
        tape.append((ncache, alpha, scache, e, excess))
        x, lags = x_next, lags_next
    if not need_grad:
        return total, None

    c_vec = spec.infection_model.c_array
    kappa = econ.kappa_array
    grads = [None] * h
    gx = np.zeros((m, 6))
    glags = np.zeros((m, N_LAGS, 6))
    for k in range(h - 1, -1, -1):
        ncache, alpha, sc, e, excess = tape[k]
        gx = gx.copy()
        gx[:, 3] += 1.0
        ge = 2.0 * cost.lam * e
        gx[:, 0] += ge * econ.kappa_i
        gx[:, 1] += ge * econ.kappa_r
        gx[:, 2] += ge * econ.kappa_d
        galpha = ge[:, None] * kappa + (2.0 * excess * weights) @ feas.a_matrix
        galpha += glags[:, -1]
        glags_prev = np.zeros_like(glags)
        glags_prev[:, 1:] = glags[:, :-1]

        i, s, pb, pg, pd = sc["i"], sc["s"], sc["pb"], sc["pg"], sc["pd"]
        gi_raw = gx[:, 0] * (sc["i_raw"] > 0.0)
        g_rn, g_dn = gx[:, 1], gx[:, 2]
        gi = gi_raw * (1.0 + s * pb - pg - pd - i * pb) + g_rn * pg + g_dn * pd
        gr = -gi_raw * i * pb + g_rn
        gd = -gi_raw * i * pb + g_dn
        gpb = gi_raw * i * s
        gpg = (g_rn - gi_raw) * i
        gpd = (g_dn - gi_raw) * i
        gbeta_n = gx[:, 3] + gpb * pb * (1.0 - pb)
        ggamma_n = gx[:, 4] + gpg * pg * (1.0 - pg)
        gdelta_n = gx[:, 5] + gpd * pd * (1.0 - pd)

        gabar = gbeta_n[:, None] * c_vec / (N_LAGS + 1)
        galpha += gabar
        glags_prev += gabar[:, None, :]

        g_o = galpha * (1.0 - alpha ** 2)
        gu, grads[k] = _net_backward(stack.networks[k], ncache, g_o)
        gv = gu / stack.normalizer.scale
        gx = np.column_stack([gi, gr, gd, np.zeros(m), ggamma_n * sc["g_mult"],
                              gdelta_n * sc["d_mult"]]) + gv[:, :6]
        glags = glags_prev + gv[:, 6:].reshape(m, N_LAGS, 6)
    return total, [g for step in grads for g in step]


def _blocks(n):
    return [(a, min(a + REDUCTION_BLOCK, n)) for a in range(0, n, REDUCTION_BLOCK)]


def _reduce(stack, spec, noise, need_grad, threads):
    blocks = _blocks(len(noise))

    def work(ab):
        return _chunk_objective(stack, spec, noise[ab[0]:ab[1]], need_grad)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(ab) for ab in blocks]
    # fixed reduction order regardless of thread count
    total = 0.0
    grad = None
    for t, g in parts:
        total += t
        if need_grad:
            grad = [a.copy() for a in g] if grad is None else [a + b for a, b in zip(grad, g)]
    n = len(noise)
    return total / n, (None if grad is None else [g / n for g in grad])


def objective_and_gradient(stack: PolicyStack, spec: ProblemSpec, noise_batch, threads: int = 1):
    """Mean penalised cumulative cost ``J`` over the batch and ``dJ/dtheta``.

    The gradient is returned as a flat list matching ``stack.params()``.
    """
    noise = np.asarray(noise_batch, dtype=float)
    if noise.ndim != 3 or noise.shape[1] != stack.horizon or noise.shape[2] != 3:
        raise ValueError(f"noise must have shape (paths, {stack.horizon}, 3)")
    if stack.horizon != spec.horizon:
        raise ValueError("policy horizon does not match the problem horizon")
    return _reduce(stack, spec, noise, True, threads)


def objective(stack: PolicyStack, spec: ProblemSpec, noise_batch, threads: int = 1) -> float:
    return _reduce(stack, spec, np.asarray(noise_batch, dtype=float), False, threads)[0]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    b1, b2 = config.beta1, config.beta2
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("parameter and gradient shapes differ")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def fit_normalizer(stack: PolicyStack, spec: ProblemSpec, noise) -> Normalizer:
    """Per-coordinate mean and standard deviation of the states visited by
    ``stack`` on ``noise``.

    Coordinates that never vary are not centred (that would feed exact
    zeros into every unit); they are divided by their magnitude instead.
    """
    states = []

    def recording(step, x, lags):
        states.append(np.concatenate([x, lags.reshape(len(x), -1)], axis=1))
        return stack.act(step, x, lags)

    rollout(spec, recording, noise)
    w = np.concatenate(states)
    shift = w.mean(axis=0)
    scale = w.std(axis=0)
    flat = scale <= 1e-12 * (1.0 + np.abs(shift))
    scale[flat] = np.where(np.abs(shift[flat]) > 0, np.abs(shift[flat]), 1.0)
    shift[flat] = 0.0
    return Normalizer(shift, scale)


@dataclass
class TrainResult:
    stack: PolicyStack
    curve: list                  # (epoch, train_J, heldout_J); epoch 0 is the initial stack
    best_epoch: int

    @property
    def best_heldout(self) -> float:
        return min(row[2] for row in self.curve)

    def curve_csv(self) -> str:
        lines = ["epoch,train_J,heldout_J"]
        lines += [f"{e},{tr!r},{ho!r}" for e, tr, ho in self.curve]
        return "\n".join(lines) + "\n"


def train(spec: ProblemSpec, layout: NetworkLayout = NetworkLayout(),
          config: TrainConfig = TrainConfig(), threads: int = 1,
          init: PolicyStack | None = None) -> TrainResult:
    """Minimise the mean penalised cost with minibatch Adam.

    All randomness derives from ``config.master_seed``; the result is a
    pure function of the arguments (``threads`` does not change it).  The
    returned stack is the checkpoint with the lowest held-out objective.
    """
    seed = config.master_seed
    h = spec.horizon
    if init is None:
        stack = init_stack(layout, h, seed)
        pilot = _rng.noise_batch(seed, _rng.STREAM_PILOT, config.n_pilot_paths, h)
        stack.normalizer = fit_normalizer(stack, spec, pilot)
    else:
        stack = init.copy()
        if stack.horizon != h:
            raise ValueError("initial stack horizon does not match the problem")
    train_noise = _rng.noise_batch(seed, _rng.STREAM_TRAIN, config.n_train_paths, h)
    held_noise = _rng.noise_batch(seed, _rng.STREAM_HELDOUT, config.n_heldout_paths, h)
    shuffler = _rng.generator(seed, _rng.STREAM_TRAIN + 100)

    held = objective(stack, spec, held_noise, threads)
    if not np.isfinite(held):
        raise SolverError("initial policy has a non-finite objective")
    curve = [(0, held, held)]
    best, best_j, best_epoch = stack.copy(), held, 0
    params = stack.params()
    state = AdamState.zeros_like(params)
    n = config.n_train_paths
    for epoch in range(1, config.epochs + 1):
        perm = shuffler.permutation(n)
        batch_js = []
        for a in range(0, n, config.batch_size):
            idx = perm[a:a + config.batch_size]
            try:
                j, g = objective_and_gradient(stack, spec, train_noise[idx], threads)
            except SolverError as exc:
                raise SolverError(f"epoch {epoch}: {exc}") from None
            if not np.isfinite(j) or not all(np.all(np.isfinite(x)) for x in g):
                raise SolverError(f"training diverged at epoch {epoch}")
            params, state = adam_step(params, g, state, config)
            stack.set_params(params)
            batch_js.append(j * len(idx))
        train_j = float(np.sum(batch_js) / n)
        held = objective(stack, spec, held_noise, threads)
        if not np.isfinite(held):
            raise SolverError(f"held-out objective non-finite at epoch {epoch}")
        curve.append((epoch, train_j, held))
        log.debug("epoch %d train %.6g heldout %.6g", epoch, train_j, held)
        if held < best_j:
            best, best_j, best_epoch = stack.copy(), held, epoch
    return TrainResult(best, curve, best_epoch)


@dataclass
class CrossValidation:
    weights: np.ndarray
    scale: float
    violations: dict = field(default_factory=dict)   # scale -> max validation violation
    satisfied: bool = True
    stacks: dict = field(default_factory=dict)       # (scale, lambda) -> trained stack


def max_violation(stack: PolicyStack, spec: ProblemSpec, noise) -> float:
    """Largest PCA-box excess over every path and step (sup norm)."""
    roll = rollout(spec, stack.act, noise)
    excess = spec.feasible.excess(roll.controls.reshape(-1, 6))
    return float(np.abs(excess).max(initial=0.0))


def cross_validate_penalties(spec: ProblemSpec, candidate_scales, config: TrainConfig,
                             layout: NetworkLayout = NetworkLayout(), lambdas=None,
                             n_validation_paths: int = 2048, tol: float = 1e-6,
                             threads: int = 1) -> CrossValidation:
    """Pick the smallest uniform penalty weight whose trained controls stay
    inside the PCA box on a disjoint validation set.

    ``lambdas`` lists the risk-aversion values to check each candidate at
    (default: the problem's own).  If no candidate qualifies the largest is
    returned with a warning.
    """
    scales = [float(s) for s in candidate_scales]
    if not scales:
        raise ValueError("no candidate penalty scales")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("candidate scales must be strictly ascending")
    lambdas = [spec.cost.lam] if lambdas is None else list(lambdas)
    val_noise = _rng.noise_batch(config.master_seed, _rng.STREAM_VALIDATION,
                                 n_validation_paths, spec.horizon)
    result = CrossValidation(np.full(6, scales[-1]), scales[-1], satisfied=False)
    for scale in scales:
        worst = 0.0
        for lam in lambdas:
            sp = spec.with_penalty(scale).with_lambda(lam)
            tr = train(sp, layout, config, threads)
            result.stacks[(scale, lam)] = tr.stack
            worst = max(worst, max_violation(tr.stack, sp, val_noise))
        result.violations[scale] = worst
        log.info("penalty scale %g: max validation violation %.3g", scale, worst)
        if worst <= tol:
            result.weights, result.scale, result.satisfied = np.full(6, scale), scale, True
            return result
    warnings.warn(f"no penalty scale kept validation controls within {tol}; "
                  f"using the largest ({scales[-1]})", RuntimeWarning, stacklevel=2)
    return result
