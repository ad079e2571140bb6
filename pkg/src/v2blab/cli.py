"""Command-line front end: sample, solve, train, eval.

Exit codes: 0 success, 2 configuration error, 3 infeasible or solver failure,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .core import ConfigError, V2BError, compute_bill, default_chargers
from .io import load_episode, read_json, save_episode, write_csv, write_json
from .sim import AssignmentPolicy, Priority, TieBreak

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ENV = "V2BLAB_OUT"

log = logging.getLogger("v2blab")


def _weights(text: str) -> tuple:
    try:
        values = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be three numbers, got {text!r}")
    if len(values) != 3 or min(values) < 0:
        raise argparse.ArgumentTypeError("weights are lambda_S,lambda_E,lambda_D (non-negative)")
    return values


def _out_dir(args, default_name: str) -> str:
    out = args.out or os.path.join(os.environ.get(OUT_ENV, "runs"), default_name)
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(path, allowed: set) -> dict:
    if path is None:
        return {}
    try:
        data = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def _assignment(data: dict) -> AssignmentPolicy:
    try:
        return AssignmentPolicy(Priority(data.get("priority", "bidirectional")),
                                TieBreak(data.get("tie_break", "departure")),
                                int(data.get("rng_seed", 0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _episode_files(path: str) -> list:
    if os.path.isfile(path):
        return [path]
    files = sorted(glob.glob(os.path.join(path, "*.json")))
    files = [f for f in files if os.path.basename(f) != "manifest.json"]
    if not files:
        raise ConfigError(f"no episode files in {path}")
    return files


def _load_episodes(path: str):
    episodes, chargers = [], None
    for f in _episode_files(path):
        ep, ch, _ = load_episode(f)
        ch = ch or default_chargers()
        if chargers is None:
            chargers = ch
        elif ch != chargers:
            raise ConfigError(f"{f}: charger fleet differs from the rest of the batch")
        episodes.append(ep)
    return episodes, chargers


# -- commands ------------------------------------------------------------------

def cmd_sample(args) -> int:
    from .datagen import ScenarioSpec, estimate_peak, sample_month, split_daily

    cfg = _load_config(args.config, {"scenario", "n", "estimate_peak", "peak_adjustment"})
    spec = ScenarioSpec.from_dict(cfg.get("scenario", {}))
    n = args.n if args.n is not None else int(cfg.get("n", 1))
    if n < 1:
        raise ConfigError("n must be at least 1")
    out = _out_dir(args, "sample")
    chargers = spec.chargers()
    seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(n)]
    months = [sample_month(spec, s) for s in seeds]
    peak = None
    if args.estimate_peak or cfg.get("estimate_peak", False):
        peak = estimate_peak(months, chargers, float(cfg.get("peak_adjustment", 0.0)),
                             args.weights)
        months = [replace(m, estimated_peak_kw=peak) for m in months]

    files = []
    for i, (month, seed) in enumerate(zip(months, seeds)):
        name = os.path.join("monthly", f"m{i:03d}.json")
        save_episode(os.path.join(out, name), month, chargers, {"seed": seed, "index": i})
        files.append(name)
        for k, day in enumerate(split_daily(month)):
            dname = os.path.join("daily", f"m{i:03d}-d{k:02d}.json")
            save_episode(os.path.join(out, dname), day, chargers,
                         {"seed": seed, "month": i, "weekday_index": k})
            files.append(dname)
    write_json(os.path.join(out, "manifest.json"), {
        "command": "sample", "version": __version__, "seed": args.seed, "n": n,
        "month_seeds": seeds, "scenario": spec.as_dict(), "estimated_peak_kw": peak,
        "files": files,
    })
    print(f"wrote {n} billing periods to {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    from .oracle.lp import solve_episode

    cfg = _load_config(args.config, {"assignment", "peak_cap"})
    episode, chargers, _ = load_episode(args.episode)
    chargers = chargers or default_chargers()
    sol = solve_episode(episode, chargers, args.weights, _assignment(cfg.get("assignment", {})),
                        peak_cap=args.peak_cap if args.peak_cap is not None
                        else cfg.get("peak_cap"))
    out = _out_dir(args, "solve")
    result = {"status": sol.status, "episode": os.path.abspath(args.episode),
              "weights": list(args.weights)}
    if sol.optimal:
        bill = compute_bill(episode, sol.schedule, sol.final_socs)
        result.update(objective=sol.objective_value, peak_kw=sol.peak_kw, bill=bill.as_dict(),
                      missing_soc_kwh=sol.missing_soc, schedule=sol.schedule.tolist())
    write_json(os.path.join(out, "solution.json"), result)
    if not sol.optimal:
        print(f"solver status: {sol.status}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"optimal: objective {sol.objective_value:.4f}, bill {bill.total_usd:.2f} USD")
    return EXIT_OK


def cmd_train(args) -> int:
    from .oracle.lp import guidance_action
    from .rl.ddpg import DdpgConfig, save_checkpoint, train

    cfg = _load_config(args.config, {"episodes", "eval_episodes", "training", "guidance",
                                     "assignment", "greedy_override"})
    if "episodes" not in cfg:
        raise ConfigError("training config needs an 'episodes' path")
    base = os.path.dirname(os.path.abspath(args.config))
    episodes, chargers = _load_episodes(os.path.join(base, cfg["episodes"]))
    eval_eps = None
    if cfg.get("eval_episodes"):
        eval_eps, _ = _load_episodes(os.path.join(base, cfg["eval_episodes"]))
    training = dict(cfg.get("training", {}))
    if args.seed is not None:
        training["seed"] = args.seed
    if args.weights is not None:
        training["lambdas"] = args.weights
    config = DdpgConfig.from_dict(training)
    oracle = guidance_action if cfg.get("guidance", True) else None
    result = train(episodes, chargers, config, oracle, eval_eps,
                   assignment=_assignment(cfg.get("assignment", {})),
                   greedy_override=bool(cfg.get("greedy_override", True)))
    out = _out_dir(args, "train")
    save_checkpoint(os.path.join(out, "checkpoint.json"), result.policy, config, result.critic)
    write_csv(os.path.join(out, "train_log.csv"), result.log,
              ("step", "episode", "reward", "eval_bill"))
    write_json(os.path.join(out, "manifest.json"), {
        "command": "train", "version": __version__, "config": cfg,
        "training": asdict(config), "steps": result.steps,
        "oracle_fraction": result.oracle_fraction, "stopped_early": result.stopped_early,
    })
    print(f"trained {result.steps} steps; checkpoint in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .heuristics import POLICIES
    from .rl.ddpg import load_checkpoint
    from .rl.evaluate import ORACLE, TABLE_COLUMNS, evaluate

    cfg = _load_config(args.config, {"assignment"})
    episodes, chargers = _load_episodes(args.episodes)
    names = [p for p in (args.policies or "").split(",") if p]
    if not names:
        names = sorted(POLICIES) + [ORACLE] + (["ddpg"] if args.checkpoint else [])
    policies = {}
    for name in names:
        if name == ORACLE:
            continue
        if name == "ddpg":
            if not args.checkpoint:
                raise ConfigError("policy 'ddpg' needs --checkpoint")
            policies[name] = load_checkpoint(args.checkpoint)
        elif name in POLICIES:
            policies[name] = POLICIES[name]
        else:
            raise ConfigError(f"unknown policy {name!r}")
    table = evaluate(episodes, chargers, policies, ORACLE in names, args.weights,
                     _assignment(cfg.get("assignment", {})), jobs=args.jobs)
    out = _out_dir(args, "eval")
    write_csv(os.path.join(out, "table.csv"), table.rows, TABLE_COLUMNS)
    write_json(os.path.join(out, "table.json"), table.as_json())
    write_json(os.path.join(out, "manifest.json"), {
        "command": "eval", "version": __version__, "episodes": _episode_files(args.episodes),
        "policies": sorted(names), "weights": list(args.weights), "checkpoint": args.checkpoint,
        "config": cfg,
    })
    for row in table.rows:
        print(f"{row['policy']:>8}  bill {row['bill_mean']:10.2f} +- {row['bill_std']:8.2f}  "
              f"shave {row['shave_mean']:8.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2blab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, weights_default=(1.0, 1.0, 3.0)):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<command>)")
        p.add_argument("--weights", type=_weights, default=weights_default,
                       help="lambda_S,lambda_E,lambda_D (default 1,1,3)")

    p = sub.add_parser("sample", help="generate billing periods and daily splits")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-n", type=int, default=None, help="number of billing periods")
    p.add_argument("--estimate-peak", action="store_true",
                   help="set the estimated peak from the oracle peaks of the batch")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="solve one episode with the oracle LP")
    common(p)
    p.add_argument("episode")
    p.add_argument("--peak-cap", type=float, default=None, help="hard cap on the billed peak")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train the masked DDPG policy")
    common(p, weights_default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="tabulate bills of policies on an episode set")
    common(p)
    p.add_argument("episodes", help="episode file or directory")
    p.add_argument("--checkpoint")
    p.add_argument("--policies", help="comma-separated: fc,trickle,t-llf,t-edf,cf-llf,cf-edf,"
                                      "ddpg,oracle (default: all available)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .oracle.lp import SolverError
    from .rl.ddpg import NumericError

    try:
        return args.func(args)
    except NumericError as exc:
        out = getattr(args, "out", None) or os.environ.get(OUT_ENV, "runs")
        os.makedirs(out, exist_ok=True)
        write_json(os.path.join(out, "diagnostics.json"), exc.diagnostics)
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, V2BError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
