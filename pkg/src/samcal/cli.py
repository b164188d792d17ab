"""``samcal`` command line.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 theory-check violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .data import CsvFormatError
from .mlp import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_THEORY = 0, 2, 3, 4


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
        cfg = replace(cfg, data=replace(cfg.data, seed=args.seed))
    return cfg


def _splits(args, cfg):
    if getattr(args, "data", None):
        return ex.read_splits(args.data, cfg.data.K if cfg.data.kind != "moons" else 2)
    return ex.make_splits(cfg)


def _checkpoints(args) -> list[Path]:
    if args.checkpoint:
        return [Path(c) for c in args.checkpoint]
    raise ConfigError("--checkpoint is required")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="samcal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment TOML file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override train and data seeds")
        return p

    add("gen-data", "write train/val/test CSVs")
    p = add("train", "train a model (or ensemble) and evaluate it")
    p.add_argument("--probe", action="store_true", help="record (p_y, p_tilde) per SAM step")
    for name, help_ in (("evaluate", "metrics for a checkpoint"), ("calibrate", "post-hoc calibration")):
        p = add(name, help_)
        p.add_argument("--checkpoint", nargs="+", help="checkpoint JSON file(s); several = ensemble")
        p.add_argument("--data", help="directory with train/val/test CSVs")
        if name == "calibrate":
            p.add_argument("--method", choices=("temperature", "isotonic"), default="temperature")
    p = add("theory", "numerical checks of the entropy bounds")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--probe", action="store_true", help="also monitor a probe training run from --config")
    add("sweep", "sweep rho, gamma or switch_epoch over seeds")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(args.out)
        if args.command == "gen-data":
            ex.cmd_gen_data(cfg, out)
        elif args.command == "train":
            manifest = ex.cmd_train(cfg, out, probe=args.probe)
            if manifest["status"] != "ok":
                print(f"training diverged: {manifest.get('message', '')}", file=sys.stderr)
                return EXIT_DIVERGED
        elif args.command == "evaluate":
            ex.cmd_evaluate(_checkpoints(args), _splits(args, cfg), cfg, out)
        elif args.command == "calibrate":
            ex.cmd_calibrate(_checkpoints(args), _splits(args, cfg), args.method, out, cfg.M)
        elif args.command == "theory":
            summary = ex.cmd_theory(out, args.samples, args.samples, max(1, args.samples // 10),
                                    probe_cfg=cfg if args.probe else None)
            if summary["total_violations"]:
                print(f"theory violations: {summary['total_violations']}", file=sys.stderr)
                return EXIT_THEORY
        elif args.command == "sweep":
            ex.cmd_sweep(cfg, out)
    except (ConfigError, CsvFormatError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
