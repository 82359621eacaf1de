"""Command-line experiment runner.

Verbs: validate, train, run, table, sweep, curves. Results land under
--out, defaulting to $UAVISAC_OUT or ./results. Exit codes: 0 success,
1 validation error, 2 runtime failure.
"""

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .drl_mappo import train
from .harness import (AXES, METHODS, ExperimentSpec, checkpoint_path,
                      emit_comparison_table, emit_sweep_data, run_experiment,
                      train_checkpoint, validate_spec)
from .scenario import build_scenario, validate_config


class ValidationFailure(Exception):
    pass


def _out_root(args) -> str:
    if args.out:
        return args.out
    return os.environ.get("UAVISAC_OUT", "results")


def _values(raw: str):
    vals = []
    for tok in raw.replace(",", " ").split():
        vals.append(float(tok) if "." in tok or "-" in tok else int(tok))
    return tuple(vals)


def _spec_from_args(args) -> ExperimentSpec:
    run_config = load_config(args.config)
    return ExperimentSpec(
        run_config=run_config,
        methods=tuple(args.methods.replace(",", " ").split()),
        axis=args.axis,
        values=_values(args.values),
        seeds=tuple(int(s) for s in args.seeds.replace(",", " ").split()),
        out_dir=_out_root(args),
        train_first=args.train_first,
        train_episodes=args.episodes,
        workers=args.workers,
    )


def cmd_validate(args) -> int:
    run_config = load_config(args.config)
    problems = validate_config(run_config.scenario)
    for p in problems:
        print(f"violation: {p}")
    if problems:
        raise ValidationFailure(f"{len(problems)} violation(s)")
    build_scenario(run_config.scenario)
    print("configuration valid")
    return 0


def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    for value in spec.values:
        path = train_checkpoint(spec, value)
        print(f"checkpoint written: {path}")
    return 0


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    problems = validate_spec(spec)
    if problems:
        for p in problems:
            print(f"violation: {p}")
        raise ValidationFailure(f"{len(problems)} violation(s)")
    rows = run_experiment(spec)
    print(f"{len(rows)} result rows written to {spec.out_dir}/results.csv")
    return 0


def cmd_table(args) -> int:
    path = emit_comparison_table(_out_root(args))
    print(f"comparison table written: {path}")
    return 0


def cmd_sweep(args) -> int:
    path = emit_sweep_data(_out_root(args), args.axis)
    print(f"sweep data written: {path}")
    return 0


def cmd_curves(args) -> int:
    run_config = load_config(args.config)
    out = Path(_out_root(args))
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds.replace(",", " ").split():
        mappo = replace(run_config.mappo, seed=int(seed))
        if args.episodes is not None:
            mappo = replace(mappo, max_episodes=args.episodes)
        scenario = build_scenario(run_config.scenario)
        _, curve = train(scenario, mappo, run_config.reward)
        path = out / f"curve_seed{seed}.csv"
        curve.write_csv(path)
        print(f"learning curve written: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavisac",
        description="Multi-UAV corridor data-collection experiments with "
                    "ISAC QoS feasibility checks")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, needs_grid=False):
        p.add_argument("--config", default=None,
                       help="config file (bundled defaults otherwise)")
        p.add_argument("--out", default=None,
                       help="output directory (default $UAVISAC_OUT or ./results)")
        if needs_grid:
            p.add_argument("--methods", default="drl_sdr,greedy_online,"
                           "greedy_offline,pso,ga,drl_sc",
                           help=f"comma list from {METHODS}")
            p.add_argument("--axis", default="uav_count", choices=AXES)
            p.add_argument("--values", default="1,2,3,4,5",
                           help="sweep values (sinr_threshold axis in dB)")
            p.add_argument("--seeds", default="0,1,2,3,4")
            p.add_argument("--train-first", action="store_true",
                           help="train missing DRL checkpoints before running")
            p.add_argument("--episodes", type=int, default=None,
                           help="training episode override")
            p.add_argument("--workers", type=int, default=1,
                           help="parallel cell workers (1 = deterministic)")

    p = sub.add_parser("validate", help="check a configuration file")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train MAPPO checkpoints for sweep values")
    common(p, needs_grid=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run a method/axis/seed experiment grid")
    common(p, needs_grid=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("table", help="emit the UAV-count comparison table")
    common(p)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("sweep", help="emit long-format sweep + reduction data")
    common(p)
    p.add_argument("--axis", default="md_count", choices=AXES)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("curves", help="train and emit learning curves")
    common(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
