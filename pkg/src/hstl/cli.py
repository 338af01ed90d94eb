"""Command line interface: ``hstl train | rollout | eval | compare | robustness``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .env import EnvError
from .harness import (
    Policy,
    compare_option_sets,
    evaluate_spec,
    read_trace,
    rollout,
    trace_csv,
    train,
    write_run,
)
from .learning import LearningError
from .options import OptionError
from .stl import StlError, Trajectory, format_stl, parse_stl, robustness, truncate_horizon

log = logging.getLogger("hstl")

EXIT_CODES = {"config": 2, "formula": 3, "io": 4, "runtime": 1}


def _config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        changes["episodes"] = args.episodes
    return config.replace(**changes) if changes else config


def _out(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(args) -> None:
    config = _config(args)

    def progress(entry):
        if entry.episode % max(1, config.episodes // 20) == 0:
            log.info("episode %d reward %.1f steps %d", entry.episode, entry.cumulative_reward, entry.steps)

    result = train(config, engine=args.engine, progress=progress)
    files = write_run(result, _out(args))
    print(f"wrote {len(files)} files to {args.out}")


def _parse_start(text):
    if text is None or text == "random":
        return None
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--start must be 'random' or comma-separated integers, got {text!r}") from None


def cmd_rollout(args) -> None:
    policy = Policy.load(args.policy)
    rows = rollout(policy, _parse_start(args.start), args.steps, args.epsilon, seed=args.seed or 0)
    out = _out(args) / args.name
    out.write_text(trace_csv(rows, policy.meta["variables"]))
    print(f"wrote {len(rows)} steps to {out}")


def _formula_from(args):
    if args.policy:
        policy = Policy.load(args.policy)
        return policy.formula(), policy.meta["variables"]
    config = load_config(args.config) if args.config else RunConfig()
    return parse_stl(config.formula, ("x", "y"), config.aliases), ["x", "y"]


def cmd_eval(args) -> None:
    phi, variables = _formula_from(args)
    states = read_trace(args.trace, variables)
    report = evaluate_spec(states, phi, args.window, args.skip, variables)
    summary = report.to_dict()
    if args.out:
        (_out(args) / "eval.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))


def cmd_compare(args) -> None:
    config = _config(args)
    comparison = compare_option_sets(config, args.modes, trailing=args.trailing, engine=args.engine)
    out = _out(args)
    for mode, result in zip(comparison.modes, comparison.results):
        write_run(result, out / mode)
    (out / "curves.csv").write_text(comparison.curve_csv())
    (out / "comparison.json").write_text(json.dumps(comparison.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(comparison.to_dict(), sort_keys=True))


def cmd_robustness(args) -> None:
    aliases = dict(a.split("=", 1) for a in args.alias)
    variables = args.variables.split(",")
    phi = parse_stl(args.formula, variables, aliases)
    traj = Trajectory.of(read_trace(args.trace, variables), variables)
    if args.truncate:
        phi = truncate_horizon(phi, len(traj) - args.t)
        traj = traj[args.t :]
        t = 0
    else:
        t = args.t
    value = robustness(traj, phi, t)
    print(json.dumps({"formula": format_stl(phi), "t": args.t, "robustness": str(value)}))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hstl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="."):
        p.add_argument("--config", help="JSON run configuration (defaults to the patrol experiment)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("train", help="learn flat and options policies")
    common(p, "run")
    p.add_argument("--episodes", type=int)
    p.add_argument("--engine", choices=("fast", "reference"), default="fast")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="follow an exported policy and write a trace")
    common(p)
    p.add_argument("--policy", required=True, help="directory written by 'train'")
    p.add_argument("--start", default="random", help="'x,y' or 'random'")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--name", default="trace.csv")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="sliding-window robustness of a trace")
    common(p, None)
    p.add_argument("--trace", required=True)
    p.add_argument("--policy", help="take the formula from an exported policy")
    p.add_argument("--window", type=int, default=40)
    p.add_argument("--skip", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train with two option-set modes and compare rewards")
    common(p, "compare")
    p.add_argument("--episodes", type=int)
    p.add_argument("--modes", nargs=2, default=["subsets-in-order", "all-permutations"])
    p.add_argument("--trailing", type=int, default=200)
    p.add_argument("--engine", choices=("fast", "reference"), default="fast")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("robustness", help="evaluate a formula on a trace file")
    p.add_argument("--formula", required=True)
    p.add_argument("--alias", action="append", default=[], metavar="NAME=TEXT")
    p.add_argument("--trace", required=True, help="CSV with one column per variable")
    p.add_argument("--variables", default="x,y")
    p.add_argument("--t", type=int, default=0)
    p.add_argument("--truncate", action="store_true", help="clip the formula to the trace length first")
    p.set_defaults(func=cmd_robustness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ConfigError, OptionError, LearningError, EnvError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    except StlError as exc:
        print(f"error[formula]: {exc}", file=sys.stderr)
        return EXIT_CODES["formula"]
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    except ValueError as exc:
        print(f"error[runtime]: {exc}", file=sys.stderr)
        return EXIT_CODES["runtime"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
