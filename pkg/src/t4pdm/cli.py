"""Command-line entry point: ``t4pdm <command> [--config PATH] [--out DIR] [--seed N] [--force]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from .config import load_config
from .runner import COMMANDS

log = logging.getLogger("t4pdm")

HELP = {
    "synth": "generate a labelled synthetic vibration dataset (CSV + manifest)",
    "prepare": "segment recordings and write FFT magnitude features",
    "train": "split, fit the feature pipeline, train the model, save the bundle",
    "evaluate": "evaluate a saved bundle on the test split",
    "ablation": "run the five experiment presets and tabulate their metrics",
    "transfer": "replace the head of a trained bundle and retrain on a new dataset",
    "predict": "predict classes for every window in a feature store",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--out", type=Path, default=Path("run"), help="output directory (default: ./run)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="t4pdm", description="Transformer fault diagnosis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def _setup_logging(out: Path, verbose: bool) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    if verbose:
        root.addHandler(logging.StreamHandler(sys.stderr))
    return handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out: Path = args.out
    handler = _setup_logging(out, args.verbose)
    err_path = out / "error.json"
    try:
        cfg = load_config(args.config, seed=args.seed)
        log.info("command %s, out %s", args.command, out)
        if err_path.exists():
            err_path.unlink()
        COMMANDS[args.command](cfg, out, force=args.force)
        return 0
    except Exception as exc:  # every failure leaves error.json behind
        log.error("%s failed: %s", args.command, exc)
        log.debug(traceback.format_exc())
        err_path.write_text(json.dumps({"command": args.command, "error": type(exc).__name__,
                                        "message": str(exc)}, indent=2, sort_keys=True) + "\n")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
