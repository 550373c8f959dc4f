import argparse
import sys

import structlog

from . import (
    inspector,
    instance_generator,
    model_evaluator,
    model_trainer,
    significance,
)
from .exceptions import (
    ContractViolation,
    InstanceParseError,
    ParameterError,
    RainbowJobshopError,
    TrainingError,
)
from .utils import setup_logging


log = structlog.get_logger()

SUBCOMMANDS = {
    "generate": instance_generator,
    "train": model_trainer,
    "evaluate": model_evaluator,
    "stats": significance,
    "inspect": inspector,
}

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


def register_common_args(parser):
    logging_group = parser.add_argument_group(
        "logging",
        "logging specific options",
    )
    logging_group.add_argument(
        "--devel", help="print logs in human readable format", action="store_true"
    )
    logging_group.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="increase output verbosity",
    )


def parse_args(args=None):
    parser = argparse.ArgumentParser("rainbow-jobshop")
    register_common_args(parser)
    sub_parser = parser.add_subparsers(required=True, dest="command")

    for name, module in SUBCOMMANDS.items():
        subcommand_parser = sub_parser.add_parser(name, help=module.cmd_help)
        module.register_args(subcommand_parser)
        subcommand_parser.set_defaults(func=module.cli)

    return parser.parse_args(args)


def run(argv=None) -> int:
    """Run one subcommand and map its outcome to an exit code"""
    try:
        args = parse_args(argv)
    except SystemExit as e:
        # --help exits 0, argparse usage errors exit 2
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    setup_logging(args)

    try:
        code = args.func(args)
    except TrainingError:
        log.exception("Training failed", command=args.command)
        return EXIT_TRAINING
    except ParameterError as e:
        log.error("Invalid parameters", command=args.command, error=str(e))
        return EXIT_USAGE
    except (InstanceParseError, ContractViolation, OSError) as e:
        log.error("Invalid data", command=args.command, error=str(e))
        return EXIT_DATA
    except RainbowJobshopError as e:
        log.error("Command failed", command=args.command, error=str(e))
        return EXIT_USAGE
    return EXIT_OK if code is None else code


def cli():
    sys.exit(run())
