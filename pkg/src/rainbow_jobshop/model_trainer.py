"""This module runs a training protocol from a run file and flags

Copyright 2026 The rainbow-jobshop authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.

SPDX-License-Identifier: Apache-2.0
"""
import json
import os
import pathlib

import structlog

from .exceptions import ParameterError
from .harness import ALGORITHMS, build_run_config, train
from .instance_generator import OUTPUT_ENV
from .utils import merge_config
from .value_rl import TOGGLES


log = structlog.get_logger()
cmd_help = "Trains a scheduling model"

FLAG_KEYS = (
    "problem",
    "n",
    "m",
    "algorithm",
    "episodes",
    "validation_size",
    "validation_period",
    "seed",
    "output",
    "workers",
    "embed_dim",
    "hidden_dim",
    "num_layers",
    "num_heads",
    "lr",
    "gamma",
    "n_steps",
    "batch_size",
    "ops_range",
    "pbar_lo",
    "pbar_hi",
    "spread",
    "ptime_lo",
    "ptime_hi",
)


def collect_values(args):
    """Run file values overridden by the flags given on the command line"""
    values = merge_config(args, FLAG_KEYS)
    for toggle in TOGGLES:
        if args.rainbow or getattr(args, toggle):
            values[toggle] = True
    for item in args.set or []:
        key, separator, value = item.partition("=")
        if not separator:
            raise ParameterError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    values.setdefault("output", os.environ.get(OUTPUT_ENV, "output"))
    return values


def register_args(parser):
    """Registers subcommand specific arguments to parse using argparse"""
    parser.add_argument("--config", type=pathlib.Path, help="Flat YAML run file")
    parser.add_argument("--problem", choices=["jssp", "fjsp"])
    parser.add_argument("-n", "--jobs", dest="n", type=int)
    parser.add_argument("-m", "--machines", dest="m", type=int)
    parser.add_argument("--algorithm", choices=list(ALGORITHMS))
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--validation-size", type=int)
    parser.add_argument("--validation-period", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output", help="Output directory")
    parser.add_argument("--workers", type=int, help="Parallel validation workers")
    parser.add_argument("--embed-dim", type=int)
    parser.add_argument("--hidden-dim", type=int)
    parser.add_argument("--num-layers", type=int)
    parser.add_argument("--num-heads", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--n-steps", type=int)
    parser.add_argument("--batch-size", type=int)

    generator_group = parser.add_argument_group("generator", "Training instances")
    generator_group.add_argument(
        "--ops-range",
        nargs=2,
        type=int,
        metavar=("MIN", "MAX"),
        help="FJSP operations per job, required for other than 5, 6 or 10 machines",
    )
    generator_group.add_argument("--pbar-lo", type=int, help="FJSP lowest mean time")
    generator_group.add_argument("--pbar-hi", type=int, help="FJSP highest mean time")
    generator_group.add_argument(
        "--spread", type=float, help="FJSP relative time spread around the mean"
    )
    generator_group.add_argument("--ptime-lo", type=int, help="JSSP lowest time")
    generator_group.add_argument("--ptime-hi", type=int, help="JSSP highest time")

    rainbow_group = parser.add_argument_group("rainbow", "DQN extensions")
    for toggle in TOGGLES:
        rainbow_group.add_argument(f"--{toggle}", action="store_true")
    rainbow_group.add_argument(
        "--rainbow", action="store_true", help="Enable the six extensions"
    )
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="Any run file key, may be repeated",
    )


def cli(args):
    """Entrypoint for CLI subcommand"""
    run = build_run_config(collect_values(args))
    result = train(run)
    print(
        json.dumps(
            {
                "label": run.label,
                "checkpoint": str(result.checkpoint),
                "best_validation": result.best_validation,
                "best_episode": result.best_episode,
                "training_minutes": result.training_minutes,
            }
        )
    )
    return 0
