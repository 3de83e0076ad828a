"""Command-line entry point: ``deconav <subcommand> [--config FILE] [--<field> VALUE ...]``.

Every scalar ExperimentConfig field is also a flag named by its dotted path,
for example ``--refine.k 4`` or ``--train.epochs 10``. DECONAV_SEED overrides
``base_seed``. Failures exit with status 1 and name the failing stage.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .evaluation import MemoryMode
from .pipeline import (SWEEP_AXES, ConfigError, ExperimentConfig, FingerprintMismatch, SeedRun,
                       StageError, guard_output_dir, build_long_horizon, flat_fields, load_config,
                       run_pipeline, sweep)

SUBCOMMANDS = ("gen-world", "gen-episodes", "stitch-long", "train", "eval", "collect",
               "report", "sweep", "show-config")


def _flag_type(default):
    if isinstance(default, bool):
        return str
    if isinstance(default, Enum):
        return str
    if isinstance(default, (int, float)):
        return type(default)
    if isinstance(default, tuple):
        return lambda s: [int(v) for v in s.split(",") if v]
    return str


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deconav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (sections as nested objects)")
    common.add_argument("--force", action="store_true",
                        help="overwrite outputs written under a different config fingerprint")
    common.add_argument("--quiet", action="store_true", help="suppress per-stage progress lines")
    group = common.add_argument_group("config fields")
    for key, default in flat_fields().items():
        shown = default.value if isinstance(default, Enum) else default
        group.add_argument(f"--{key}", dest=f"set:{key}", type=_flag_type(default), default=None,
                           metavar="V", help=f"(default: {shown})")
    helps = {
        "gen-world": "generate and store the worlds of every seed",
        "gen-episodes": "generate the train and held-out episode splits",
        "stitch-long": "build the long-horizon stitched split",
        "train": "behaviour-clone a policy per memory mode",
        "eval": "evaluate the behaviour-cloned policies on the held-out split",
        "collect": "collect trust-region and matched-budget DAgger corrections",
        "report": "run every stage and write report.csv / report.md / report.json",
        "sweep": "sweep one axis and write sweep-<axis>.csv / .md / .json",
        "show-config": "print the resolved config and its fingerprint",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name in ("train", "eval"):
            p.add_argument("--modes", default="none,uniform,amr",
                           help="comma-separated memory modes (default: none,uniform,amr)")
        if name == "report":
            p.add_argument("--no-long", action="store_true", help="skip the long-horizon split")
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=SWEEP_AXES)
            p.add_argument("--values", required=True,
                           help="comma-separated values, e.g. 2,4,8,12")
    return parser


def _config(args) -> ExperimentConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("set:") and v is not None}
    return load_config(args.config, overrides)


def _modes(text: str) -> list[MemoryMode]:
    try:
        return [MemoryMode(m.strip()) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _fmt(m) -> str:
    return (f"SR {100 * m.sr:5.1f}  SPL {100 * m.spl:5.1f}  NE {m.ne:5.2f}  "
            f"OS {100 * m.os:5.1f}  nDTW {100 * m.ndtw:5.1f}  (n={m.n_episodes})")


def run(args) -> int:
    log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr, flush=True))
    try:
        cfg = _config(args)
    except (ConfigError, ValueError) as exc:
        print(f"deconav: stage config failed: {exc}", file=sys.stderr)
        return 1
    cmd = args.command
    if cmd == "show-config":
        print(json.dumps({"fingerprint": cfg.fingerprint(), "config": cfg.to_dict()}, indent=2))
        return 0
    if cmd == "report":
        result = run_pipeline(cfg, force=args.force, long_horizon=not args.no_long, log=log)
        for kind, path in result.paths.items():
            print(f"{kind}: {path}")
        return 0
    if cmd == "sweep":
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            print(f"deconav: stage config failed: bad --values {args.values!r}", file=sys.stderr)
            return 1
        result = sweep(cfg, args.axis, values, force=args.force, log=log)
        for kind, path in result.paths.items():
            print(f"{kind}: {path}")
        return 0
    if cmd == "stitch-long":
        for seed, info in build_long_horizon(cfg, log).items():
            print(f"seed {seed}: {info['n_episodes']} episodes, mean shortest length "
                  f"{info['mean_length']:.2f} m -> {info['path']}")
        return 0
    guard_output_dir(cfg, args.force)
    for seed in cfg.seeds:
        sr = SeedRun(cfg, seed, log)
        if cmd == "gen-world":
            print(f"seed {seed}: {len(sr.worlds())} worlds ({sr.worlds_fp})")
        elif cmd == "gen-episodes":
            for split in ("train", "val"):
                fp, eps = sr.split(split)
                print(f"seed {seed}: {split} {len(eps)} episodes ({fp})")
        elif cmd == "train":
            for mode in _modes(args.modes):
                fp, _, meta = sr.policy(mode)
                print(f"seed {seed}: policy {mode.value} trained on {meta['n_pairs']} pairs ({fp})")
        elif cmd == "eval":
            for mode in _modes(args.modes):
                out = sr.evaluate(sr.policy(mode), "val")
                print(f"seed {seed}: {mode.value:8s} {_fmt(out.report)}")
        elif cmd == "collect":
            for kind in ("trust_region", "dagger"):
                fp, ds = sr.corrections(kind)
                print(f"seed {seed}: {kind} {len(ds)} pairs ({fp})")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        code = run(args)
    except StageError as exc:
        print(f"deconav: {exc}", file=sys.stderr)
        return 1
    except (FingerprintMismatch, ConfigError) as exc:
        print(f"deconav: stage setup failed: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
