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
from rainbow_jobshop.encoder import EncoderConfig
from rainbow_jobshop.instances import parse_fjsp, parse_jssp


# Two jobs, two machines, optimum 7 by enumeration of every dispatch order
ORACLE_TEXT = "2 2\n0 3 1 2\n1 2 0 4\n"
ORACLE_OPTIMUM = 7
ORACLE_ORDER = [(0, 0, 0), (1, 0, 1), (0, 1, 1), (1, 1, 0)]

# One job p=3 on M0 then p=4 on M1
CHAIN_TEXT = "1 2\n0 3 1 4\n"

SINGLE_TEXT = "1 1\n0 5\n"

# Job 0: O00 on {M0: 3, M1: 5} then O01 on {M1: 4}; job 1: O10 on {M0: 6}
FLEX_TEXT = "2 2\n2 2 1 3 2 5 1 2 4\n1 1 1 6\n"


def oracle():
    return parse_jssp(ORACLE_TEXT, name="oracle")


def chain():
    return parse_jssp(CHAIN_TEXT, name="chain")


def single():
    return parse_jssp(SINGLE_TEXT, name="single")


def flexible():
    return parse_fjsp(FLEX_TEXT, name="flexible")


def tiny_encoder(**overrides):
    values = {"embed_dim": 8, "hidden_dim": 16, "num_layers": 1}
    values.update(overrides)
    return EncoderConfig(**values)


def assert_feasible(instance, rows):
    """Check a schedule from the instance data alone and return its makespan"""
    by_operation = {(row.job, row.op): row for row in rows}
    assert len(by_operation) == len(rows)
    for job, operations in enumerate(instance.jobs):
        previous_end = 0
        for op, spec in enumerate(operations):
            row = by_operation[(job, op)]
            assert row.machine in spec.eligible
            assert row.end - row.start == spec.eligible[row.machine]
            assert row.start >= previous_end
            previous_end = row.end
    assert len(rows) == instance.num_operations
    for first in rows:
        for second in rows:
            if first is second or first.machine != second.machine:
                continue
            assert first.end <= second.start or second.end <= first.start
    return max(row.end for row in rows)
