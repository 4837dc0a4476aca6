"""Command-line entry point: ``nonlocal-fkpp [options] COMMAND``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..solver import DomainExhausted
from .commands import cmd_bridge, cmd_fk_validate, cmd_front, cmd_report, cmd_simulate
from .config import ConfigError, describe_schema, load_config
from .presets import PRESETS, load_preset
from .store import MissingArtifacts

THREADS_ENV = "NONLOCAL_FKPP_THREADS"
log = logging.getLogger("nonlocal_fkpp")


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonlocal-fkpp", description=__doc__)
    p.add_argument("--config", type=Path, help="INI experiment configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), help="shipped configuration")
    p.add_argument("--seed", type=int, help="overrides [run] seed")
    p.add_argument("--out", type=Path, help="run directory (default runs/<name>-<hash>)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker cap for Monte Carlo batches (default ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="integrate the PDE; write trace, snapshots, manifest")
    sub.add_parser("front", help="speed and delay-model fits from the trace")
    sub.add_parser("fk-validate", help="Feynman-Kac probes against stored snapshots")
    b = sub.add_parser("bridge", help="bridge, Gaussian-tail and tube validation tables")
    b.add_argument("--n-paths", type=int, default=100_000)
    sub.add_parser("report", help="consolidate a run directory and check expectations")
    pipe = sub.add_parser("pipeline", help="simulate, front, fk-validate (if set) and report")
    pipe.add_argument("--with-bridge", action="store_true")
    sub.add_parser("schema", help="print the configuration schema")
    sub.add_parser("show-config", help="print the resolved configuration")
    return p


def resolve_config(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = load_preset(args.preset or "light")
    if args.seed is not None:
        cfg = cfg.replace(run__seed=args.seed)
    return cfg


def run_dir_for(args, cfg) -> Path:
    return args.out or Path("runs") / f"{cfg['run', 'name']}-{cfg.hash}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "schema":
            print(describe_schema())
            return 0
        if args.command == "bridge":
            seed = args.seed if args.seed is not None else 0
            out = args.out or Path("runs") / f"bridge-seed{seed}"
            summary = cmd_bridge(out, seed=seed, n_paths=args.n_paths, threads=threads)
            print(json.dumps(summary, indent=2))
            return 0
        if args.command in ("front", "fk-validate", "report") and args.out:
            run_dir = args.out
        else:
            cfg = resolve_config(args)
            run_dir = run_dir_for(args, cfg)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_ini())
            return 0
        if args.command in ("simulate", "pipeline"):
            log.info("simulating into %s", run_dir)
            cmd_simulate(cfg, run_dir)
        if args.command in ("front", "pipeline"):
            cmd_front(run_dir)
        if args.command == "fk-validate" or (args.command == "pipeline" and cfg["fk", "t"] > 0):
            cmd_fk_validate(run_dir, threads)
        if args.command == "pipeline" and args.with_bridge:
            cmd_bridge(run_dir / "bridge", seed=cfg["run", "seed"], threads=threads)
        if args.command in ("report", "pipeline"):
            rep = cmd_report(run_dir)
            sys.stdout.write((run_dir / "summary.txt").read_text())
            return 1 if rep["failed"] else 0
        print(run_dir)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DomainExhausted as exc:
        print(f"domain exhausted: {exc}", file=sys.stderr)
        return 3
    except MissingArtifacts as exc:
        print(str(exc), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
