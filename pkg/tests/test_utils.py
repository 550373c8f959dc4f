"""
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
import argparse
import logging
import pathlib

import pytest
import structlog.stdlib

import rainbow_jobshop.utils

from rainbow_jobshop.exceptions import InstanceParseError, ParameterError


@pytest.mark.parametrize(
    "value, result",
    [
        ("true", True),
        ("TRUE", True),
        ("True", True),
        ("yes", True),
        ("y", True),
        ("1", True),
        ("wrong", False),
        ("FALSE", False),
        ("no", False),
        ("0", False),
        ("random string", False),
    ],
)
def test_str2bool(value, result):
    assert rainbow_jobshop.utils.str2bool(value) == result


@pytest.mark.parametrize("devel", [True, False])
@pytest.mark.parametrize("verbose", [0, 1, 2, 3])
def test_setup_logging(mocker, devel, verbose):
    mocker.patch("structlog.stdlib.ProcessorFormatter")
    mocker.patch("logging.getLogger")
    loggers = {}

    def get_logger(name=""):
        if name not in loggers:
            loggers[name] = mocker.MagicMock()
        return loggers[name]

    logging.getLogger.side_effect = get_logger
    args = argparse.Namespace(verbose=verbose, devel=devel)
    rainbow_jobshop.utils.setup_logging(args)

    if devel:
        processor_class = structlog.dev.ConsoleRenderer
    else:
        processor_class = structlog.processors.JSONRenderer

    assert structlog.stdlib.ProcessorFormatter.call_count == 1
    assert isinstance(
        structlog.stdlib.ProcessorFormatter.call_args[1]["processors"][-1],
        processor_class,
    )
    loggers[""].setLevel.assert_called_once_with(
        logging.INFO if verbose == 0 else logging.DEBUG
    )
    loggers[""].addHandler.assert_called_once()
    assert loggers["torch"].setLevel.call_args == mocker.call(
        logging.DEBUG if verbose >= 2 else logging.INFO
    )


def test_load_config_file(tmp_path, faker):
    seed = faker.pyint()
    path = tmp_path / "run.yaml"
    path.write_text(
        f"problem: fjsp\nn: 10\nm: 5\nlr: 0.0002\nper: true\nseed: {seed}\n"
    )
    assert rainbow_jobshop.utils.load_config_file(path) == {
        "problem": "fjsp",
        "n": 10,
        "m": 5,
        "lr": 0.0002,
        "per": True,
        "seed": seed,
    }


def test_load_config_file_empty(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("# nothing yet\n")
    assert rainbow_jobshop.utils.load_config_file(path) == {}


def test_load_config_file_invalid_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("problem: jssp\nn: [10\n")
    with pytest.raises(InstanceParseError) as e:
        rainbow_jobshop.utils.load_config_file(path)
    assert e.value.path == path
    assert e.value.line is not None


@pytest.mark.parametrize(
    "content",
    ["- jssp\n- fjsp\n", "encoder:\n  embed_dim: 8\n", "toggles: [per, ddqn]\n"],
    ids=["list", "nested_mapping", "nested_list"],
)
def test_load_config_file_not_flat(tmp_path, content):
    path = tmp_path / "run.yaml"
    path.write_text(content)
    with pytest.raises(InstanceParseError):
        rainbow_jobshop.utils.load_config_file(path)


def test_load_config_file_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        rainbow_jobshop.utils.load_config_file(tmp_path / "absent.yaml")


@pytest.mark.parametrize(
    "value, result",
    [("2,3", (2, 3)), ("4 6", (4, 6)), ([1, 1], (1, 1)), ((5, 9), (5, 9))],
)
def test_int_range(value, result):
    assert rainbow_jobshop.utils.int_range(value) == result


@pytest.mark.parametrize("value", ["3", "3,2", "a,b", 3, [1, 2, 3]])
def test_int_range_invalid(value):
    with pytest.raises((TypeError, ValueError)):
        rainbow_jobshop.utils.int_range(value)


def test_merge_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("n: 10\nm: 5\ncount: 3\n")
    args = argparse.Namespace(config=path, n=None, m=6, count=None, inputs=[])
    values = rainbow_jobshop.utils.merge_config(
        args, ("n", "m", "count", "inputs"), defaults={"count": 1, "seed": 0}
    )
    assert values == {"n": 10, "m": 6, "count": 3, "seed": 0}


def test_merge_config_without_file():
    args = argparse.Namespace(n=4)
    values = rainbow_jobshop.utils.merge_config(args, ("n", "m"), defaults={"m": 2})
    assert values == {"n": 4, "m": 2}


def test_merge_config_unknown_key(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("n: 10\njobs: 5\n")
    args = argparse.Namespace(config=path, n=None)
    with pytest.raises(ParameterError, match="jobs"):
        rainbow_jobshop.utils.merge_config(args, ("n",), known=("n",))


def test_typed_values():
    values = rainbow_jobshop.utils.typed_values(
        {"n": "3", "multistart": "yes", "out": "runs", "name": None},
        {"n": int, "multistart": bool, "out": pathlib.Path, "name": str},
    )
    assert values == {
        "n": 3,
        "multistart": True,
        "out": pathlib.Path("runs"),
        "name": None,
    }


@pytest.mark.parametrize(
    "values", [{"n": "three"}, {"multistart": 1}, {"ops_range": "4"}]
)
def test_typed_values_invalid(values):
    types = {"n": int, "multistart": bool, "ops_range": rainbow_jobshop.utils.int_range}
    with pytest.raises(ParameterError):
        rainbow_jobshop.utils.typed_values(values, types)


def test_require():
    rainbow_jobshop.utils.require({"n": 1, "m": 2}, ("n", "m"))
    with pytest.raises(ParameterError, match="'m'"):
        rainbow_jobshop.utils.require({"n": 1, "m": None}, ("n", "m"))
