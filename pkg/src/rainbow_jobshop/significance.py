"""This module aggregates evaluation tables and tests pairwise differences

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

import pandas as pd
import structlog

from .exceptions import ParameterError
from .harness import EvalReport, emit_report
from .instance_generator import OUTPUT_ENV
from .utils import merge_config, require, typed_values


log = structlog.get_logger()
cmd_help = "Writes summary and significance tables from evaluation results"


def _paths(value):
    if isinstance(value, (str, pathlib.Path)):
        return [pathlib.Path(value)]
    return [pathlib.Path(v) for v in value]


TYPES = {"inputs": _paths, "level": float, "output": pathlib.Path}


def collect_values(args):
    """Run file values overridden by the flags given on the command line

    In a run file `inputs` holds a single table or directory.
    """
    values = merge_config(
        args,
        TYPES,
        defaults={"level": 0.05, "output": os.environ.get(OUTPUT_ENV, "output")},
        known=TYPES,
    )
    values = typed_values(values, TYPES)
    require(values, ("inputs",))
    if not 0 < values["level"] < 1:
        raise ParameterError("--level must be in (0, 1)")
    return values


def find_files(paths, pattern):
    found = []
    for path in paths:
        if path.is_dir():
            found.extend(sorted(path.rglob(pattern)))
        elif path.match(pattern):
            found.append(path)
    return found


def load_reports(paths):
    """EvalReports from eval_<name>.csv files, skipping unreadable ones"""
    reports = []
    errors = 0
    for path in find_files(paths, "eval_*.csv"):
        name = path.stem[len("eval_") :]
        try:
            frame = pd.read_csv(path)
            reports.append(EvalReport.from_frame(name, name.split("_", 1)[0], frame))
        except (OSError, ValueError, pd.errors.ParserError):
            log.exception("Unable to read evaluation table", path=str(path))
            errors += 1
    return reports, errors


def load_training(paths):
    """Training minutes per algorithm label and concatenated validation curves"""
    minutes = {}
    for path in find_files(paths, "training.csv"):
        for row in pd.read_csv(path).itertuples():
            minutes[str(row.algorithm)] = float(row.training_minutes)
    curves = [pd.read_csv(path) for path in find_files(paths, "validation.csv")]
    validation = pd.concat(curves, ignore_index=True) if curves else None
    return minutes, validation


def register_args(parser):
    """Registers subcommand specific arguments to parse using argparse"""
    parser.add_argument("--config", type=pathlib.Path, help="Flat YAML run file")
    parser.add_argument(
        "inputs",
        nargs="*",
        type=pathlib.Path,
        help="Evaluation tables or directories searched recursively",
    )
    parser.add_argument("--level", type=float, help="Significance level, default 0.05")
    parser.add_argument(
        "--output",
        type=pathlib.Path,
        help=f"Report directory, defaults to ${OUTPUT_ENV} or output",
    )


def cli(args):
    """Entrypoint for CLI subcommand"""
    values = collect_values(args)
    reports, errors = load_reports(values["inputs"])
    minutes, validation = load_training(values["inputs"])
    emit_report(
        reports,
        values["output"],
        validation=validation,
        training_minutes=minutes,
        level=values["level"],
    )
    log.info("Statistics done", reports=len(reports), errors=errors)
    return 0 if errors == 0 else 2
