"""Command-line entry point: ``tactilesense {calibrate,train,interrogate,characterize,report}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ExperimentConfig
from .errors import ConfigError, TactileError, exit_code
from .mechprops import CalibrationSurface

log = logging.getLogger("tactilesense")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.profile is not None:
        changes["profile"] = args.profile
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    return cfg.validate()


def _load_model(path: Optional[str]):
    from .sac import load_checkpoint
    if not path:
        raise ConfigError("--model is required (a checkpoint written by 'train')")
    try:
        return load_checkpoint(path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"{path}: cannot load checkpoint ({e})") from e


def _load_surface(path: Optional[str]) -> CalibrationSurface:
    if not path:
        raise ConfigError("--surface is required (a surface.json written by 'calibrate')")
    try:
        return CalibrationSurface.load(path)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"{path}: cannot load calibration surface ({e})") from e


def cmd_calibrate(args) -> int:
    from .pipeline import run_calibrate
    d = run_calibrate(_load_config(args), args.out)
    print(d / "surface.json")
    return 0


def cmd_train(args) -> int:
    from .pipeline import run_train
    d = run_train(_load_config(args), args.out)
    print(d / "checkpoint.bin")
    return 0


def cmd_interrogate(args) -> int:
    from .pipeline import run_interrogate
    cfg = _load_config(args)
    d, status = run_interrogate(cfg, _load_model(args.model), _load_surface(args.surface), args.out)
    print(d / "report.json")
    return status


def cmd_characterize(args) -> int:
    from .pipeline import run_characterize
    cfg = _load_config(args)
    d, status = run_characterize(cfg, _load_model(args.model), _load_surface(args.surface), args.out)
    print(d / "report.json")
    return status


def cmd_report(args) -> int:
    from .report import load_report, render_csv, render_table
    rep = load_report(args.report)
    sys.stdout.write(render_table(rep))
    if args.csv:
        Path(args.csv).write_text(render_csv(rep))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tactilesense", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults if omitted")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output base directory (default: config output_dir)")
    common.add_argument("--profile", choices=("full", "reduced"), help="sensor profile override")

    sub.add_parser("calibrate", parents=[common], help="fit the size surface").set_defaults(func=cmd_calibrate)
    sub.add_parser("train", parents=[common], help="train the pressing agent").set_defaults(func=cmd_train)
    for name, func, text in (("interrogate", cmd_interrogate, "locate and characterize inclusions"),
                             ("characterize", cmd_characterize, "characterize inclusions at known positions")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--model", help="checkpoint from 'train'")
        sp.add_argument("--surface", help="surface.json from 'calibrate'")
        sp.set_defaults(func=func)
    rp = sub.add_parser("report", help="render a report as tables")
    rp.add_argument("report", help="report.json path")
    rp.add_argument("--csv", help="also write the table as CSV to this path")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TactileError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
