"""
Main command-line entry point
"""
import argparse
import sys
from typing import List, Optional

from app.cli.commands import cmd_ablate, cmd_anonymize, cmd_recover, cmd_sweep, cmd_world
from app.cli.middleware import run_command
from sandbox_types import SolverKind
from utils.helpers import set_log_level


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="Run configuration (TOML); built-in defaults when omitted")
    parser.add_argument("--seed", type=int, help="Override the run seed")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--out", help="Output directory (default: run.output_dir)")


def _add_guidance(parser: argparse.ArgumentParser):
    parser.add_argument("--lambda-cfg", type=float, help="Guidance scale (negative for anonymization)")
    parser.add_argument("--lambda-ipa", type=float, help="Adapter scale (>= 0)")
    parser.add_argument("--solver", choices=[kind.value for kind in SolverKind], help="Inversion/sampling solver")


def _add_attribute_mode(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--keep-attr", action="store_true", default=True,
                       help="Keep the input attribute (default)")
    group.add_argument("--set-attr", type=int, metavar="LABEL", help="Swap every output to this attribute")
    group.add_argument("--drop-attr", action="store_true", help="Generate without an attribute condition")


def create_parser() -> argparse.ArgumentParser:
    """Build the sandbox argument parser"""
    parser = argparse.ArgumentParser(
        prog="sandbox",
        description="Reverse-personalization anonymization on Gaussian mixture worlds",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    world = commands.add_parser("world", help="Write world.json and samples.csv")
    _add_common(world)
    world.set_defaults(handler=cmd_world)

    anonymize = commands.add_parser("anonymize", help="Anonymize the points of a CSV")
    _add_common(anonymize)
    _add_guidance(anonymize)
    _add_attribute_mode(anonymize)
    anonymize.add_argument("--input", required=True, help="CSV with x_0..x_{d-1} columns")
    anonymize.add_argument("--trajectory-dir", help="Also write one trajectory CSV per sample here")
    anonymize.set_defaults(handler=cmd_anonymize)

    sweep = commands.add_parser("sweep", help="Evaluate a guidance grid")
    _add_common(sweep)
    sweep.add_argument("--grid", required=True, help='e.g. "cfg=-20:0:5; ipa=0,0.5,1"')
    sweep.add_argument("--samples", type=int, help="Samples per cell (default: run.samples)")
    sweep.add_argument("--threads", type=int, help="Worker threads (default: SANDBOX_THREADS or CPU count)")
    sweep.set_defaults(handler=cmd_sweep)

    ablate = commands.add_parser("ablate", help="DDPM vs DDIM inversion ablation")
    _add_common(ablate)
    _add_guidance(ablate)
    ablate.add_argument("--samples", type=int, help="Samples (default: run.samples)")
    ablate.set_defaults(handler=cmd_ablate)

    recover = commands.add_parser("recover", help="Recovery attack on an anonymize output CSV")
    _add_common(recover)
    _add_guidance(recover)
    recover.add_argument("--input", required=True, help="anonymized.csv with x_* and out_x_* columns")
    recover.set_defaults(handler=cmd_recover)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and dispatch; returns the process exit code"""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)

    if args.log_level:
        set_log_level(args.log_level)
    return run_command(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
