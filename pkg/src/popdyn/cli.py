"""Command-line experiment runner.

Subcommands:
  list           registry of experiments with one-line descriptions
  run NAME       execute one experiment, write report + CSV artifacts
  validate       parse and range-check a config file without running

Flags: --config PATH, --seed N, --replicates N, --out DIR, --threads N.
Environment overrides use the POPDYN_ prefix (POPDYN_SEED, POPDYN_REPLICATES,
POPDYN_OUT, POPDYN_THREADS) and lose to explicit flags.

Exit codes: 0 all checks passed, 1 at least one check failed, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_config, render_config
from .experiments import get_experiment, list_experiments, run_experiment

ENV_PREFIX = "POPDYN_"


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="popdyn",
                                 description="stochastic population-dynamics experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list registered experiments")

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("name")
    run.add_argument("--config", type=Path, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--replicates", type=int, default=None)
    run.add_argument("--out", type=Path, default=None)
    run.add_argument("--threads", type=int, default=None)

    val = sub.add_parser("validate", help="validate a config file")
    val.add_argument("name")
    val.add_argument("--config", type=Path, required=True)
    return ap


def _load_config(name: str, path: Path | None) -> dict:
    exp = get_experiment(name)
    text = path.read_text(encoding="utf-8") if path is not None else ""
    cfg = parse_config(text, exp.schema_factory())
    if cfg["experiment.name"] and cfg["experiment.name"] != name:
        raise ConfigError(f"experiment.name {cfg['experiment.name']!r} does not match {name!r}")
    cfg["experiment.name"] = name
    return cfg


def _apply_overrides(cfg: dict, args) -> dict:
    env = os.environ
    if f"{ENV_PREFIX}SEED" in env:
        cfg["experiment.seed"] = int(env[f"{ENV_PREFIX}SEED"])
    if f"{ENV_PREFIX}REPLICATES" in env:
        cfg["experiment.replicates"] = int(env[f"{ENV_PREFIX}REPLICATES"])
    if f"{ENV_PREFIX}OUT" in env:
        cfg["experiment.out"] = env[f"{ENV_PREFIX}OUT"]
    if f"{ENV_PREFIX}THREADS" in env:
        cfg["experiment.threads"] = int(env[f"{ENV_PREFIX}THREADS"])
    if args.seed is not None:
        cfg["experiment.seed"] = args.seed
    if args.replicates is not None:
        cfg["experiment.replicates"] = args.replicates
    if args.out is not None:
        cfg["experiment.out"] = str(args.out)
    if args.threads is not None:
        cfg["experiment.threads"] = args.threads
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "list":
        for exp in list_experiments():
            print(f"{exp.name:32s} [criterion {exp.criterion:2d}] {exp.description}")
        return 0

    try:
        cfg = _load_config(args.name, getattr(args, "config", None))
    except (ConfigError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(render_config(cfg), end="")
        print("config ok")
        return 0

    try:
        cfg = _apply_overrides(cfg, args)
        for field in ("experiment.seed", "experiment.replicates", "experiment.threads"):
            if cfg[field] < 0:
                raise ConfigError(f"{field} must be >= 0")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(cfg["experiment.out"]) if cfg["experiment.out"] else Path("popdyn-out") / args.name
    report = run_experiment(args.name, cfg, out_dir)
    for row in report.rows:
        state = "PASS" if row.verdict else "FAIL"
        print(f"{state}  {row.check_id:44s} target={row.target:.6g} "
              f"estimate={row.estimate:.6g} stderr={row.stderr:.3g}")
    print(f"report: {out_dir / 'report.csv'}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
