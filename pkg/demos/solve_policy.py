"""Train one neural policy on the desk problem and compare it with a
constant policy that keeps mobility at its closure-period level."""

from esdp import rng
from esdp.control import constant_policy
from esdp.frontier import evaluate_policy
from esdp.neural import NetworkLayout, TrainConfig, train
from esdp.reference import CLOSURES_MOBILITY, desk_problem

spec = desk_problem(lam=0.01, penalty=1e4)
config = TrainConfig(learning_rate=1e-3, n_train_paths=2048, epochs=150, master_seed=0,
                     n_heldout_paths=1024)
result = train(spec, NetworkLayout(), config, threads=4)
print(f"held-out objective {result.curve[0][2]:.5f} -> {result.best_heldout:.5f} "
      f"(best epoch {result.best_epoch})")

noise = rng.noise_batch(0, rng.STREAM_EVAL, 4096, spec.horizon)
for label, policy in (("trained", result.stack), ("hold closures", constant_policy(CLOSURES_MOBILITY))):
    ev = evaluate_policy(policy, spec, noise)
    print(f"{label:<14} tracking error {ev.tracking_error:.5f}  infection rate {ev.infection_rate:.5f}")
print("mean trained controls per day (rr gp pa ts wp re):")
for row in evaluate_policy(result.stack, spec, noise).mean_controls:
    print("  " + " ".join(f"{v:+.3f}" for v in row))
