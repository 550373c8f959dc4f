"""This module evaluates a checkpoint on instance files or fresh instances

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

from .encoder import load_checkpoint
from .env import write_schedule_csv
from .exceptions import ParameterError
from .harness import emit_report, evaluate_greedy, evaluate_multistart
from .instance_generator import OUTPUT_ENV
from .instances import (
    generate_instances,
    load_instance,
    load_instance_dir,
    read_references,
)
from .utils import int_range, merge_config, require, typed_values


log = structlog.get_logger()
cmd_help = "Evaluates a checkpoint with greedy or multi-start decoding"

TYPES = {
    "checkpoint": pathlib.Path,
    "instances": pathlib.Path,
    "refs": pathlib.Path,
    "problem": str,
    "n": int,
    "m": int,
    "count": int,
    "seed": int,
    "ops_range": int_range,
    "multistart": bool,
    "workers": int,
    "name": str,
    "output": pathlib.Path,
    "schedules": pathlib.Path,
}


def collect_values(args):
    """Run file values overridden by the flags given on the command line"""
    values = merge_config(
        args,
        TYPES,
        defaults={
            "count": 100,
            "seed": 0,
            "multistart": False,
            "workers": 1,
            "output": os.environ.get(OUTPUT_ENV, "output"),
        },
        known=TYPES,
    )
    values = typed_values(values, TYPES)
    require(values, ("checkpoint",))
    return values


def load_instances(values, checkpoint):
    """Instances from files, or generated at any size for generalisation runs"""
    path = values.get("instances")
    if path is not None:
        if path.is_dir():
            instances = load_instance_dir(path)
        else:
            instances = [load_instance(path)]
        set_name = values.get("name") or path.stem
    else:
        problem = values.get("problem") or checkpoint.problem
        n, m = values.get("n"), values.get("m")
        if n is None or m is None:
            raise ParameterError("either --instances or both -n and -m are required")
        kwargs = {}
        if problem == "fjsp" and values.get("ops_range") is not None:
            kwargs["ops_range"] = values["ops_range"]
        instances = generate_instances(
            problem, n, m, values["count"], values["seed"], **kwargs
        )
        set_name = values.get("name") or f"{problem}_{n}x{m}"
    if checkpoint.problem == "jssp" and not all(i.is_jssp() for i in instances):
        raise ParameterError("a JSSP checkpoint cannot schedule flexible operations")
    return instances, set_name


def write_schedules(report, directory: pathlib.Path):
    """One `<instance>.csv` schedule per evaluated instance"""
    directory.mkdir(parents=True, exist_ok=True)
    paths = [
        write_schedule_csv(rows, directory / f"{name}.csv", makespan)
        for name, rows, makespan in zip(
            report.instances, report.schedules, report.makespans
        )
    ]
    log.info("Schedules written", directory=str(directory), count=len(paths))
    return paths


def register_args(parser):
    """Registers subcommand specific arguments to parse using argparse"""
    parser.add_argument("--config", type=pathlib.Path, help="Flat YAML run file")
    parser.add_argument("--checkpoint", type=pathlib.Path)
    parser.add_argument(
        "--instances", type=pathlib.Path, help="Instance file or directory"
    )
    parser.add_argument("--refs", type=pathlib.Path, help="Reference makespans CSV")
    parser.add_argument("--problem", choices=["jssp", "fjsp"])
    parser.add_argument("-n", "--jobs", dest="n", type=int)
    parser.add_argument("-m", "--machines", dest="m", type=int)
    parser.add_argument("--count", type=int, help="Generated instances, default 100")
    parser.add_argument("--seed", type=int, help="Default 0")
    parser.add_argument(
        "--ops-range",
        nargs=2,
        type=int,
        metavar=("MIN", "MAX"),
        help="FJSP operations per job of generated instances",
    )
    parser.add_argument(
        "--multistart",
        action="store_true",
        default=None,
        help="One greedy rollout per initial action, keep the best",
    )
    parser.add_argument("--workers", type=int, help="Default 1")
    parser.add_argument("--name", help="Name of the instance set in reports")
    parser.add_argument(
        "--output",
        type=pathlib.Path,
        help=f"Report directory, defaults to ${OUTPUT_ENV} or output",
    )
    parser.add_argument(
        "--schedules",
        type=pathlib.Path,
        help="Directory receiving the best schedule of every instance",
    )


def cli(args):
    """Entrypoint for CLI subcommand"""
    values = collect_values(args)
    checkpoint = load_checkpoint(values["checkpoint"])
    instances, set_name = load_instances(values, checkpoint)
    references = read_references(values["refs"]) if values.get("refs") else None
    label = checkpoint.metadata.get("label", checkpoint.algorithm)
    evaluate = evaluate_multistart if values["multistart"] else evaluate_greedy
    report = evaluate(
        checkpoint,
        instances,
        references,
        workers=values["workers"],
        name=f"{label}_{set_name}",
    )
    emit_report([report], values["output"])
    if values.get("schedules") is not None:
        write_schedules(report, values["schedules"])
    print(
        json.dumps(
            {
                "name": report.name,
                "instances": len(report.instances),
                "mean_makespan": report.mean_makespan,
                "mean_gap_pct": report.mean_gap,
                "mean_seconds": report.mean_seconds,
            }
        )
    )
    return 0
