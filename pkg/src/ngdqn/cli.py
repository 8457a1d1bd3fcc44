"""Command-line front end.

Subcommands: ``train``, ``trials``, ``grid``, ``diagnose``, ``plot``.
Config and grid-space files are YAML mappings; see README for the key
reference.  Exit codes: 0 success, 1 config error, 2 run failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .envs import EnvKind
from .fisher import EigenEstimateConfig
from .harness import (
    GridSpace,
    default_diagnostics_config,
    grid_search,
    inversion_diagnostics,
    plot_moving_average,
    run_trials,
    write_run_summary,
    write_training_csv,
)
from .rl import Method, TrainConfig, train


class ConfigError(Exception):
    pass


def _load_config(path: str | None, seed: int | None) -> TrainConfig:
    try:
        if path is None:
            cfg = TrainConfig()
        else:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
            if not isinstance(data, dict):
                raise ConfigError(f"config file {path} must be a YAML mapping")
            cfg = TrainConfig.from_dict(data)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return cfg
    except (OSError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise ConfigError(str(exc)) from exc


def _env(name: str) -> EnvKind:
    try:
        return EnvKind(name)
    except ValueError:
        raise ConfigError(
            f"unknown environment {name!r}; choose from "
            + ", ".join(k.value for k in EnvKind)
        )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", required=True, help="CartPole-v0 | CartPole-v1 | Acrobot-v1")
    p.add_argument("--method", choices=[m.value for m in Method], default="ngdqn")
    p.add_argument("--config", help="YAML training config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="runs", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ngdqn")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="single training run")
    _add_common(p)

    p = sub.add_parser("trials", help="multi-seed trials with summary")
    _add_common(p)
    p.add_argument("--n-seeds", type=int, default=10)

    p = sub.add_parser("grid", help="hyperparameter grid search")
    _add_common(p)
    p.add_argument("--space", help="YAML grid-space file (defaults to the built-in NGDQN space)")
    p.add_argument("--episodes", type=int, default=2000)

    p = sub.add_parser("diagnose", help="inversion-method diagnostics study")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--config", help="YAML training config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eigen-steps", type=int, default=10000)
    p.add_argument("--eigen-lr", type=float, default=0.0005)
    p.add_argument("--out", default="runs/diagnostics.csv")

    p = sub.add_parser("plot", help="training CSVs -> moving-average SVG")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--out", default="moving_avg.svg")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            env = _env(args.env)
            cfg = _load_config(args.config, args.seed)
            method = Method(args.method)
            rec = train(env, cfg, method)
            out = Path(args.out)
            write_training_csv(out / f"{method.value}_seed{cfg.seed}.csv", rec)
            write_run_summary(out / f"{method.value}_seed{cfg.seed}.json", rec, cfg)
            print(f"best_100_avg={rec.best_100_avg} wall_time={rec.wall_time:.1f}s")
            return 0 if rec.finished else 2

        if args.command == "trials":
            env = _env(args.env)
            cfg = _load_config(args.config, args.seed)
            summary = run_trials(env, cfg, Method(args.method), args.n_seeds, out_dir=args.out)
            print(f"mean best_100_avg={summary.mean} iqr={summary.iqr}")
            return 0 if not summary.incomplete_seeds else 2

        if args.command == "grid":
            env = _env(args.env)
            cfg = _load_config(args.config, args.seed)
            if args.space:
                try:
                    with open(args.space) as fh:
                        raw = yaml.safe_load(fh) or {}
                    space = GridSpace(**{k: tuple(v) for k, v in raw.items()})
                except (OSError, TypeError, yaml.YAMLError) as exc:
                    raise ConfigError(str(exc)) from exc
            else:
                space = GridSpace()
            table = grid_search(env, space, Method(args.method), args.episodes, cfg, out_dir=args.out)
            best = next((r for r in reversed(table) if r["best_100_avg"] is not None), None)
            print(f"{len(table)} configurations; best: {best}")
            return 0

        if args.command == "diagnose":
            cfg = default_diagnostics_config()
            if args.config:
                cfg = _load_config(args.config, args.seed)
            elif args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            eigen = EigenEstimateConfig(steps=args.eigen_steps, learning_rate=args.eigen_lr)
            records = inversion_diagnostics(args.episodes, cfg, eigen_cfg=eigen, out_path=args.out)
            print(f"{len(records)} diagnostic records -> {args.out}")
            return 0

        if args.command == "plot":
            plot_moving_average(args.csvs, args.out)
            print(f"wrote {args.out}")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # run failure
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
