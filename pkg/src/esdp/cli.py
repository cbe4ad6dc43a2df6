"""Command-line driver.

Exit codes: 0 success, 2 input/data error, 3 numerical or solver error,
4 usage error.  Human-readable tables go to stdout; machine-readable
artifacts go to files under ``--out`` together with ``manifest.json``.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_DATA, EXIT_SOLVER, EXIT_USAGE = 0, 2, 3, 4

log = logging.getLogger("esdp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int | None = None) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise ValueError(f"cannot parse numbers from {text!r}") from None
    if n is not None and len(v) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {len(v)}")
    return v


def _lambda_grid(text: str | None):
    from .frontier import default_lambda_grid

    if text is None:
        return default_lambda_grid()
    if text.startswith("log:"):
        lo, hi, n = text[4:].split(":")
        return default_lambda_grid(int(n), float(lo), float(hi))
    return _floats(text)


def _date(text):
    return None if text is None else dt.date.fromisoformat(text)


def _add_shared(p):
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--mobility-units", choices=("fraction", "percent"), default="fraction")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--lambda-grid", default=None,
                   help="comma list, or log:LOW:HIGH:N for log spacing")
    p.add_argument("--config", default=None, help="JSON file of option defaults")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_training(p):
    p.add_argument("--spec", default="desk",
                   help="frozen problem JSON, or 'desk' for the built-in reference problem")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--penalty", type=float, default=None, help="uniform penalty weight")
    p.add_argument("--penalty-scales", default=None,
                   help="comma list of candidate scales for cross-validation")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--train-paths", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--hidden-width", type=int, default=64)
    p.add_argument("--hidden-layers", type=int, default=2)
    p.add_argument("--eval-paths", type=int, default=2048)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="esdp", description="Efficient social-distancing policies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="fit the epidemic and economic models")
    _add_shared(p)
    p.add_argument("--mobility", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--population", type=float, required=True)
    p.add_argument("--cleaning-start", default=None)
    p.add_argument("--beta-start", default=None)
    p.add_argument("--gamma-delta-start", default=None)
    p.add_argument("--econ-start", default=None)
    p.add_argument("--pca-start", default=None)
    p.add_argument("--clamp-eps", type=float, default=1e-8)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)

    p = sub.add_parser("simulate", help="Monte Carlo scenario under fixed mobility")
    _add_shared(p)
    p.add_argument("--spec", default=None, help="frozen problem JSON supplying parameters")
    p.add_argument("--preset", default=None)
    p.add_argument("--mobility-vector", default=None)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--quantiles", default="0.45,0.5,0.55")
    p.add_argument("--dump-ensemble", action="store_true")

    p = sub.add_parser("solve", help="train one policy")
    _add_shared(p)
    _add_training(p)

    p = sub.add_parser("frontier", help="sweep lambda and build the frontier")
    _add_shared(p)
    _add_training(p)

    p = sub.add_parser("efficiency", help="efficiency ratio against a frontier")
    _add_shared(p)
    p.add_argument("--frontier", required=True, help="frontier.json or frontier CSV")
    p.add_argument("--point", default=None, help="te,rate")
    p.add_argument("--mobility-vector", default=None)
    p.add_argument("--spec", default="desk")

    p = sub.add_parser("recommend", help="recommended policy at the held-fixed tracking error")
    _add_shared(p)
    _add_training(p)
    p.add_argument("--frontier", required=True, help="frontier.json from the frontier command")
    p.add_argument("--last-friday", required=True, help="mobility vector held fixed")
    p.add_argument("--budget", type=int, default=6)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.exit(EXIT_DATA, f"esdp: cannot read config {args.config}: {exc}\n")
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.exit(EXIT_USAGE, f"esdp: unknown config keys: {', '.join(unknown)}\n")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)   # explicit flags still win
    return args


# ---------------------------------------------------------------- helpers

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str, written: list) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    written.append(name)
    return path


def _manifest(args, out: Path, inputs: list, outputs: list, started: float, extra=None):
    import scipy

    from . import __version__

    opts = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "verbose")}
    blob = json.dumps(opts, sort_keys=True, default=str)
    # thread count does not change outputs, so it stays out of the hash
    hashed = json.dumps({k: v for k, v in opts.items() if k != "threads"},
                        sort_keys=True, default=str)
    man = {
        "command": args.command,
        "options": json.loads(blob),
        "config_hash": hashlib.sha256(hashed.encode()).hexdigest(),
        "seed": args.seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": outputs,
        "versions": {"esdp": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "elapsed_seconds": round(time.time() - started, 3),
    }
    if extra:
        man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, indent=2), encoding="utf-8")


def _require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} needs --seed (no clock-based seeding)")


def _load_spec(args):
    from .control import ProblemSpec
    from .reference import desk_problem

    if args.spec in (None, "desk"):
        spec = desk_problem()
    else:
        spec = ProblemSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    if getattr(args, "horizon", None) is not None:
        spec = spec.with_horizon(args.horizon)
    if getattr(args, "lam", None) is not None:
        spec = spec.with_lambda(args.lam)
    if getattr(args, "penalty", None) is not None:
        spec = spec.with_penalty(args.penalty)
    return spec


def _train_setup(args):
    from .neural import NetworkLayout, TrainConfig

    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                      n_train_paths=args.train_paths, epochs=args.epochs,
                      master_seed=args.seed)
    layout = NetworkLayout(hidden_layers=args.hidden_layers, hidden_width=args.hidden_width)
    return cfg, layout


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _controls_csv(controls, lam=None) -> str:
    from .data import MOBILITY_COLUMNS

    head = ("lambda," if lam is not None else "") + "step," + ",".join(MOBILITY_COLUMNS)
    lines = [head]
    for k, row in enumerate(controls):
        pre = f"{lam!r}," if lam is not None else ""
        lines.append(pre + f"{k + 1}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands

def cmd_calibrate(args, out, written, inputs):
    from .calibration import calibrate
    from .control import ControlState, CostConfig, ProblemSpec
    from .data import align, load_cases_csv, load_index_csv, load_mobility_csv, write_aligned_csv
    from .economic import EconomicTarget

    mob = load_mobility_csv(args.mobility, units=args.mobility_units)
    cases = load_cases_csv(args.cases, args.population, _date(args.cleaning_start))
    inputs += [args.mobility, args.cases]
    index = None
    if args.index:
        index = load_index_csv(args.index)
        inputs.append(args.index)
    ds = align(mob, cases, index, _date(args.beta_start), _date(args.gamma_delta_start))
    cal = calibrate(ds, clamp_eps=args.clamp_eps, econ_start=_date(args.econ_start),
                    pca_start=_date(args.pca_start))
    _write(out, "aligned.csv", write_aligned_csv(ds), written)
    _write(out, "calibration.json", cal.report_json(), written)
    _write(out, "log_odds.csv", "date,beta,gamma,delta,clamped\n" + "".join(
        f"{ds.dates[k + 1].isoformat()},{cal.log_odds.beta[k]!r},{cal.log_odds.gamma[k]!r},"
        f"{cal.log_odds.delta[k]!r},{int(cal.log_odds.clamped[k].any())}\n"
        for k in range(len(cal.log_odds.beta))), written)

    rep = cal.report()
    inf = rep["infection"]
    print("infection log-odds regression (R^2 %.4f, Shapiro-Wilk p %.3g)"
          % (inf["r_squared"], inf["shapiro_wilk_p"]))
    print(_table(("term", "coef", "se"),
                 [(k, f"{v:.4f}", f"{inf['standard_errors'][k]:.4f}")
                  for k, v in inf["coefficients"].items()]))
    print("dynamics: " + ", ".join(f"{k}={v:.4g}" for k, v in rep["dynamics"].items()))
    if cal.economic is None:
        print("economic model: absent (no index data)")
        return {"economic_model": "absent"}
    eco = rep["economic"]
    print("economic regression (R^2 %.4f)" % eco["r_squared"])
    print(_table(("term", "coef", "se"),
                 [(k, f"{v:.4g}", f"{eco['standard_errors'][k]:.4g}")
                  for k, v in eco["coefficients"].items()]))

    # freeze a control problem at the last observed date
    last = len(ds) - 1
    lags = ds.mobility[last - 3:last + 1]
    x = np.concatenate([ds.epidemic[last, 1:],
                        [cal.log_odds.beta[-1], cal.log_odds.gamma[-1], cal.log_odds.delta[-1]]])
    closes = ds.index_close[np.isfinite(ds.index_close)]
    h = args.horizon or 5
    spec = ProblemSpec(cal.infection, cal.dynamics, cal.economic, cal.feasible,
                       CostConfig(args.lam, EconomicTarget(float(closes[-1])), np.zeros(6), h),
                       ControlState(x, lags))
    _write(out, "problem.json", spec.to_json(), written)
    return {"economic_model": "present"}


def cmd_simulate(args, out, written, inputs):
    from .scenarios import ScenarioSpec, preset_mobility, quantile_curves, simulate

    _require_seed(args)
    if (args.preset is None) == (args.mobility_vector is None):
        raise UsageError("give exactly one of --preset or --mobility-vector")
    alpha = (preset_mobility(args.preset) if args.preset is not None
             else _floats(args.mobility_vector, 6))
    kw = {}
    if args.spec:
        spec = _load_spec(args)
        if args.spec != "desk":
            inputs.append(args.spec)
        st = spec.initial_state
        kw = dict(initial_ird=(st.i, st.r, st.d), gamma0=st.gamma, delta0=st.delta,
                  infection_model=spec.infection_model, dynamics=spec.dynamics)
    scen = ScenarioSpec(tuple(alpha), args.days, args.paths, args.seed, **kw)
    ens = simulate(scen, threads=args.threads)
    qc = quantile_curves(ens, _floats(args.quantiles))
    _write(out, "scenario_summary.csv", qc.to_csv(), written)
    if args.dump_ensemble:
        ens.save(out / "ensemble.npz")
        written.append("ensemble.npz")
    mid = len(qc.probabilities) // 2
    rows = [(d, f"{qc.i[mid, d]:.4g}", f"{qc.r[mid, d]:.4g}", f"{qc.d[mid, d]:.4g}")
            for d in sorted({0, 30, 90, 180, args.days} & set(range(args.days + 1)))]
    print(f"quantile {qc.probabilities[mid]} of {args.paths} paths")
    print(_table(("day", "I", "R", "D"), rows))
    return {"mobility": alpha.tolist()}


def cmd_solve(args, out, written, inputs):
    from . import rng
    from .frontier import evaluate_policy
    from .neural import cross_validate_penalties, train

    _require_seed(args)
    spec = _load_spec(args)
    if args.spec != "desk":
        inputs.append(args.spec)
    cfg, layout = _train_setup(args)
    extra = {}
    if args.penalty_scales:
        cv = cross_validate_penalties(spec, _floats(args.penalty_scales), cfg, layout,
                                      threads=args.threads)
        spec = spec.with_penalty(cv.weights)
        extra["penalty_scale"] = cv.scale
        extra["penalty_cv_satisfied"] = cv.satisfied
    res = train(spec, layout, cfg, threads=args.threads)
    noise = rng.noise_batch(args.seed, rng.STREAM_EVAL, args.eval_paths, spec.horizon)
    ev = evaluate_policy(res.stack, spec, noise)
    _write(out, "policy.json", res.stack.to_json(), written)
    _write(out, "training_curve.csv", res.curve_csv(), written)
    _write(out, "controls.csv", _controls_csv(ev.mean_controls), written)
    _write(out, "problem.json", spec.to_json(), written)
    summary = {"lambda": spec.cost.lam, "tracking_error": ev.tracking_error,
               "infection_rate": ev.infection_rate, "best_epoch": res.best_epoch,
               "best_heldout_J": res.best_heldout}
    _write(out, "evaluation.json", json.dumps(summary, indent=2), written)
    print(_table(("lambda", "TE", "rate", "best epoch", "held-out J"),
                 [(f"{spec.cost.lam:.4g}", f"{ev.tracking_error:.5g}",
                   f"{ev.infection_rate:.5g}", res.best_epoch, f"{res.best_heldout:.6g}")]))
    return extra


def cmd_frontier(args, out, written, inputs):
    from .frontier import frontier_csv, mean_controls_csv, sweep_lambda

    _require_seed(args)
    spec = _load_spec(args)
    if args.spec != "desk":
        inputs.append(args.spec)
    cfg, layout = _train_setup(args)
    scales = _floats(args.penalty_scales) if args.penalty_scales else None
    fr = sweep_lambda(spec, _lambda_grid(args.lambda_grid), cfg, layout, eval_seed=args.seed,
                      n_eval_paths=args.eval_paths, penalty_scales=scales,
                      threads=args.threads, allow_single=True)
    _write(out, "frontier.csv", frontier_csv(fr), written)
    _write(out, "mean_controls.csv", mean_controls_csv(fr), written)
    _write(out, "frontier.json", json.dumps(fr.to_dict(), indent=2), written)
    print(_table(("lambda", "TE", "rate", "dominated"),
                 [(f"{p.lam:.4g}", f"{p.tracking_error:.5g}", f"{p.infection_rate:.5g}",
                   "yes" if p.dominated else "") for p in fr.points]))
    if fr.failures:
        for lam, msg in fr.failures.items():
            print(f"lambda {lam:.4g} failed: {msg}", file=sys.stderr)
        print("warning: partial frontier written", file=sys.stderr)
        return {"failures": {repr(k): v for k, v in fr.failures.items()}, "exit": EXIT_SOLVER}
    return {}


def _read_frontier(path):
    from .frontier import Frontier, read_frontier_csv

    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        return Frontier.from_dict(json.loads(text))
    return read_frontier_csv(text)


def cmd_efficiency(args, out, written, inputs):
    from . import rng
    from .control import constant_policy
    from .frontier import efficiency_ratio, evaluate_policy

    fr = _read_frontier(args.frontier)
    inputs.append(args.frontier)
    if (args.point is None) == (args.mobility_vector is None):
        raise UsageError("give exactly one of --point or --mobility-vector")
    if args.point is not None:
        te, rate = _floats(args.point, 2)
    else:
        spec = _load_spec(args)
        seed = fr.eval_seed if args.seed is None else args.seed
        n = fr.n_eval_paths or 2048
        noise = rng.noise_batch(seed, rng.STREAM_EVAL, n, spec.horizon)
        ev = evaluate_policy(constant_policy(_floats(args.mobility_vector, 6)), spec, noise)
        te, rate = ev.tracking_error, ev.infection_rate
    rep = efficiency_ratio((te, rate), fr)
    _write(out, "efficiency.json", rep.to_json(), written)
    print(_table(("TE", "rate", "TE*", "rate*", "ER"),
                 [(f"{rep.point_te:.5g}", f"{rep.point_rate:.5g}", f"{rep.benchmark_te:.5g}",
                   f"{rep.benchmark_rate:.5g}", f"{rep.efficiency_ratio:.4%}")]))
    return {}


def cmd_recommend(args, out, written, inputs):
    from .frontier import Frontier, recommend_esdp

    _require_seed(args)
    spec = _load_spec(args)
    if args.spec != "desk":
        inputs.append(args.spec)
    if not str(args.frontier).endswith(".json"):
        raise UsageError("recommend needs frontier.json (it records the evaluation batch)")
    fr = Frontier.from_dict(json.loads(Path(args.frontier).read_text(encoding="utf-8")))
    inputs.append(args.frontier)
    cfg, layout = _train_setup(args)
    rec = recommend_esdp(_floats(args.last_friday, 6), spec, fr, cfg, layout,
                         budget=args.budget, threads=args.threads)
    p = rec.point
    doc = {"lambda": rec.lam, "tracking_error": p.tracking_error,
           "infection_rate": p.infection_rate, "held_tracking_error": rec.held_te,
           "held_infection_rate": rec.held_rate, "te_residual": rec.residual,
           "retrained": rec.retrained,
           "controls": None if p.mean_controls is None else p.mean_controls.tolist()}
    _write(out, "recommendation.json", json.dumps(doc, indent=2), written)
    if p.mean_controls is not None:
        _write(out, "recommended_controls.csv", _controls_csv(p.mean_controls, rec.lam), written)
    print(_table(("", "TE", "rate"),
                 [("held fixed", f"{rec.held_te:.5g}", f"{rec.held_rate:.5g}"),
                  (f"lambda*={rec.lam:.4g}", f"{p.tracking_error:.5g}",
                   f"{p.infection_rate:.5g}")]))
    print(f"TE residual {rec.residual:.3g} after {rec.retrained} retraining run(s)")
    return {}


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "frontier": cmd_frontier,
    "efficiency": cmd_efficiency,
    "recommend": cmd_recommend,
}


def main(argv=None) -> int:
    from .calibration import FitError
    from .data import DataError
    from .frontier import FrontierError
    from .neural import SolverError

    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:     # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    out = Path(args.out)
    written, inputs = [], []
    if args.config:
        inputs.append(args.config)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, out, written, inputs) or {}
    except UsageError as exc:
        print(f"esdp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, SolverError, FrontierError, FloatingPointError) as exc:
        print(f"esdp: numerical error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, OSError, ValueError, KeyError) as exc:
        print(f"esdp: input error: {exc}", file=sys.stderr)
        return EXIT_DATA
    code = extra.pop("exit", EXIT_OK)
    _manifest(args, out, inputs, written, started, extra)
    return code


if __name__ == "__main__":
    sys.exit(main())
