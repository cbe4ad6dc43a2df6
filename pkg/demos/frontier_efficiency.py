"""Sweep risk aversion, print the economy-epidemic frontier, and score a
few hand-picked constant policies by their efficiency ratio."""

from esdp import rng
from esdp.control import constant_policy
from esdp.frontier import (
    FrontierError,
    default_lambda_grid,
    efficiency_ratio,
    evaluate_policy,
    frontier_csv,
    sweep_lambda,
)
from esdp.neural import TrainConfig
from esdp.reference import desk_problem
from esdp.scenarios import preset_mobility

spec = desk_problem(penalty=1e4)
config = TrainConfig(learning_rate=1e-3, n_train_paths=2048, epochs=150, master_seed=0,
                     n_heldout_paths=1024)
fr = sweep_lambda(spec, default_lambda_grid(5), config, eval_seed=0, n_eval_paths=4096,
                  threads=4)
print(frontier_csv(fr))

noise = rng.noise_batch(fr.eval_seed, rng.STREAM_EVAL, fr.n_eval_paths, spec.horizon)
for name in ("alerts", "school", "school_work"):
    ev = evaluate_policy(constant_policy(preset_mobility(name)), spec, noise)
    try:
        er = efficiency_ratio((ev.tracking_error, ev.infection_rate), fr).efficiency_ratio
        print(f"{name:<12} TE {ev.tracking_error:.5f}  rate {ev.infection_rate:.5f}  ER {er:.3f}")
    except FrontierError as exc:
        print(f"{name:<12} TE {ev.tracking_error:.5f}  rate {ev.infection_rate:.5f}  ({exc})")
