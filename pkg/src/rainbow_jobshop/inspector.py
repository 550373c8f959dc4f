"""This module describes instance files and checkpoints

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
import dataclasses
import json
import pathlib

import structlog

from .encoder import load_checkpoint
from .env import feasible_actions, reset
from .instances import FJSP_SUFFIX, JSSP_SUFFIX, load_instance


log = structlog.get_logger()
cmd_help = "Prints a JSON summary of an instance file or a checkpoint"


def describe_instance(path: pathlib.Path):
    instance = load_instance(path)
    state = reset(instance)
    return {
        "name": instance.name,
        "problem": "jssp" if instance.is_jssp() else "fjsp",
        "jobs": instance.num_jobs,
        "machines": instance.num_machines,
        "operations": instance.num_operations,
        "average_flexibility": instance.average_flexibility(),
        "initial_makespan_estimate": state.makespan,
        "initial_actions": len(feasible_actions(state)),
    }


def describe_checkpoint(path: pathlib.Path):
    checkpoint = load_checkpoint(path)
    return {
        "algorithm": checkpoint.algorithm,
        "problem": checkpoint.problem,
        "encoder": dataclasses.asdict(checkpoint.network.config),
        "algorithm_config": checkpoint.algorithm_config,
        "metadata": checkpoint.metadata,
        "parameters": sum(p.numel() for p in checkpoint.network.parameters()),
    }


def register_args(parser):
    """Registers subcommand specific arguments to parse using argparse"""
    parser.add_argument("path", type=pathlib.Path, help="Instance file or checkpoint")


def cli(args):
    """Entrypoint for CLI subcommand"""
    if args.path.suffix in (JSSP_SUFFIX, FJSP_SUFFIX):
        summary = describe_instance(args.path)
    else:
        summary = describe_checkpoint(args.path)
    log.debug("Inspected", path=str(args.path))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0
