"""Features used by all parts of the package

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
import logging
import pathlib

from typing import Any, Callable, Collection, Dict, Mapping, Optional, Tuple

import structlog
import yaml

from .exceptions import InstanceParseError, ParameterError


log = structlog.get_logger()


def setup_logging(args):
    """Setup logging framework"""
    if args.verbose >= 1:
        log_level = logging.DEBUG
    else:
        log_level = logging.INFO

    time_stamper = structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S")
    shared_processors = [
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.StackInfoRenderer(),
        structlog.dev.set_exc_info,
        time_stamper,
    ]

    if args.devel:
        renderer = structlog.dev.ConsoleRenderer()
    else:
        renderer = structlog.processors.JSONRenderer()
        shared_processors.append(structlog.processors.format_exc_info)

    structlog.configure(
        processors=shared_processors
        + [
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=shared_processors,
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            renderer,
        ],
    )
    # StreamHandler writes to stderr, stdout is kept for command output
    handler = logging.StreamHandler()
    handler.setFormatter(formatter)
    root_logger = logging.getLogger()
    root_logger.addHandler(handler)
    root_logger.setLevel(log_level)

    logging.getLogger("torch").setLevel(logging.INFO)
    if args.verbose >= 2:
        logging.getLogger("torch").setLevel(logging.DEBUG)


def str2bool(value: str) -> bool:
    """Convert a string to a boolean using the content of the string"""
    return value.lower() in ["true", "yes", "y", "1"]


def load_config_file(path: pathlib.Path) -> Dict[str, Any]:
    """Read a flat key/value YAML run file"""
    path = pathlib.Path(path)
    try:
        content = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        line = None
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise InstanceParseError(f"invalid YAML: {e}", line=line, path=path) from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise InstanceParseError("run file must be a mapping", path=path)
    for key, value in content.items():
        if isinstance(value, (dict, list)):
            raise InstanceParseError(f"key {key!r} must hold a scalar", path=path)
    log.debug("Loaded run file", path=str(path), keys=sorted(content))
    return content


def int_range(value) -> Tuple[int, int]:
    """`LO,HI` string or two-item sequence as an ordered integer pair"""
    if isinstance(value, str):
        value = value.replace(",", " ").split()
    low, high = (int(v) for v in value)
    if high < low:
        raise ValueError(f"empty range [{low}, {high}]")
    return low, high


def merge_config(
    args,
    keys: Collection[str],
    defaults: Optional[Mapping[str, Any]] = None,
    known: Optional[Collection[str]] = None,
) -> Dict[str, Any]:
    """Defaults, overridden by the --config run file, overridden by the flags given

    Flags left unset on the command line are None (or an empty list).
    """
    values = dict(defaults or {})
    path = getattr(args, "config", None)
    if path is not None:
        file_values = load_config_file(path)
        if known is not None:
            unknown = sorted(set(file_values) - set(known))
            if unknown:
                raise ParameterError(f"unknown keys {unknown} in {path}")
        values.update(file_values)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None and value != []:
            values[key] = value
    return values


def typed_values(
    values: Mapping[str, Any], types: Mapping[str, Callable[[Any], Any]]
) -> Dict[str, Any]:
    """Convert each value with the converter of its key, None is kept"""
    converted = dict(values)
    for key, kind in types.items():
        value = converted.get(key)
        if value is None:
            continue
        try:
            if kind is bool:
                converted[key] = str2bool(value) if isinstance(value, str) else value
            else:
                converted[key] = kind(value)
        except (TypeError, ValueError) as e:
            raise ParameterError(f"invalid value {value!r} for {key}") from e
        if kind is bool and not isinstance(converted[key], bool):
            raise ParameterError(f"invalid value {value!r} for {key}")
    return converted


def require(values: Mapping[str, Any], keys: Collection[str]):
    missing = [key for key in keys if values.get(key) is None]
    if missing:
        raise ParameterError(
            f"missing values for {missing}, pass them as flags or in the run file"
        )
