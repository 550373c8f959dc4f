"""This module writes random benchmark-style instances

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
import os
import pathlib

import structlog

from .instances import FJSP_SUFFIX, JSSP_SUFFIX, generate_instances, write_instance
from .utils import int_range, merge_config, require, typed_values


log = structlog.get_logger()
cmd_help = "Generates random JSSP or FJSP instances"

OUTPUT_ENV = "RAINBOW_JOBSHOP_OUTPUT"

TYPES = {
    "problem": str,
    "n": int,
    "m": int,
    "count": int,
    "seed": int,
    "ops_range": int_range,
    "out": pathlib.Path,
}


def collect_values(args):
    """Run file values overridden by the flags given on the command line"""
    values = merge_config(
        args,
        TYPES,
        defaults={"count": 1, "seed": 0, "out": os.environ.get(OUTPUT_ENV, ".")},
        known=TYPES,
    )
    values = typed_values(values, TYPES)
    require(values, ("problem", "n", "m"))
    return values


def write_instances(instances, directory: pathlib.Path, suffix: str):
    """Write every instance, logging and counting the ones that fail"""
    written = []
    errors = 0
    for instance in instances:
        path = directory / f"{instance.name}{suffix}"
        try:
            written.append(write_instance(path, instance))
        except OSError:
            log.exception("Unable to write instance", path=str(path))
            errors += 1
    log.info(
        "Instances written",
        directory=str(directory),
        written=len(written),
        errors=errors,
    )
    return written, errors


def register_args(parser):
    """Registers subcommand specific arguments to parse using argparse"""
    parser.add_argument("--config", type=pathlib.Path, help="Flat YAML run file")
    parser.add_argument("--problem", choices=["jssp", "fjsp"])
    parser.add_argument("-n", "--jobs", dest="n", type=int)
    parser.add_argument("-m", "--machines", dest="m", type=int)
    parser.add_argument("--count", type=int, help="Number of instances, default 1")
    parser.add_argument("--seed", type=int, help="Default 0")
    parser.add_argument(
        "--ops-range",
        nargs=2,
        type=int,
        metavar=("MIN", "MAX"),
        help="FJSP operations per job, defaults to the range of the machine count",
    )
    parser.add_argument(
        "--out",
        type=pathlib.Path,
        help=f"Output directory, defaults to ${OUTPUT_ENV} or the current one",
    )


def cli(args):
    """Entrypoint for CLI subcommand"""
    values = collect_values(args)
    kwargs = {}
    if values.get("ops_range") is not None:
        if values["problem"] != "fjsp":
            log.warning("--ops-range only applies to FJSP, ignored")
        else:
            kwargs["ops_range"] = values["ops_range"]
    instances = generate_instances(
        values["problem"],
        values["n"],
        values["m"],
        values["count"],
        values["seed"],
        **kwargs,
    )
    out = values["out"]
    out.mkdir(parents=True, exist_ok=True)
    suffix = JSSP_SUFFIX if values["problem"] == "jssp" else FJSP_SUFFIX
    _, errors = write_instances(instances, out, suffix)
    return 0 if errors == 0 else 2
