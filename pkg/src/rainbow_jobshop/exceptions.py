"""Errors raised by the package

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


class RainbowJobshopError(Exception):
    """Base class of every error raised on purpose by this package"""


class ParameterError(RainbowJobshopError, ValueError):
    """A parameter or configuration value is out of its valid range"""


class InstanceParseError(RainbowJobshopError, ValueError):
    """An instance or reference file could not be read"""

    def __init__(self, message, line=None, path=None):
        self.reason = message
        self.line = line
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}:"
        if line is not None:
            location += f"{line}:"
        super().__init__(f"{location} {message}" if location else message)


class ContractViolation(RainbowJobshopError, RuntimeError):
    """A caller broke the precondition of an operation"""


class TrainingError(RainbowJobshopError, RuntimeError):
    """Training produced a non-finite signal"""

    def __init__(self, message, **diagnostics):
        self.diagnostics = diagnostics
        if diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in sorted(diagnostics.items()))
            message = f"{message} ({details})"
        super().__init__(message)
