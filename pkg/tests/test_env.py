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
import itertools

import numpy as np
import pytest

import rainbow_jobshop.env

from rainbow_jobshop.env import (
    Action,
    ScheduledOperation,
    feasible_actions,
    reset,
    step,
)
from rainbow_jobshop.exceptions import ContractViolation
from rainbow_jobshop.instances import generate_instances, parse_jssp

import fixtures


def play(state, actions):
    rewards = []
    for action in actions:
        state, reward = step(state, Action(*action))
        rewards.append(reward)
    return state, rewards


def all_orders(state):
    if rainbow_jobshop.env.is_terminal(state):
        yield state
        return
    for action in feasible_actions(state):
        yield from all_orders(step(state, action)[0])


def test_reset():
    state = reset(fixtures.oracle())
    assert state.t == 0
    assert not any(state.scheduled)
    assert not rainbow_jobshop.env.is_terminal(state)
    assert state.makespan == 6
    assert feasible_actions(state) == [Action(0, 0, 0), Action(1, 0, 1)]


def test_reset_chain_estimate():
    state = reset(fixtures.chain())
    assert state.job_completion(0) == 7
    assert state.makespan == 7


def test_oracle_order():
    initial = reset(fixtures.oracle())
    state, rewards = play(initial, fixtures.ORACLE_ORDER)
    assert rainbow_jobshop.env.is_terminal(state)
    assert state.makespan == fixtures.ORACLE_OPTIMUM
    assert rewards == [0.0, 0.0, 0.0, -1.0]
    assert sum(rewards) == initial.makespan - state.makespan
    assert feasible_actions(state) == []


def test_oracle_enumeration():
    makespans = [state.makespan for state in all_orders(reset(fixtures.oracle()))]
    assert min(makespans) == fixtures.ORACLE_OPTIMUM
    assert max(makespans) == 11


def test_step_does_not_mutate():
    state = reset(fixtures.oracle())
    before = (list(state.scheduled), list(state.end), state.makespan, state.t)
    step(state, Action(0, 0, 0))
    assert (list(state.scheduled), list(state.end), state.makespan, state.t) == before


@pytest.mark.parametrize(
    "action",
    [Action(0, 1, 1), Action(0, 0, 1), Action(2, 0, 0), Action(1, 0, 0)],
    ids=["wrong_op", "ineligible", "unknown_job", "ineligible_other_job"],
)
def test_step_infeasible(action):
    with pytest.raises(ContractViolation):
        step(reset(fixtures.oracle()), action)


def test_step_terminal():
    state, _ = play(reset(fixtures.oracle()), fixtures.ORACLE_ORDER)
    with pytest.raises(ContractViolation):
        step(state, Action(0, 0, 0))


def test_step_without_makespan_increase():
    state, reward = step(reset(fixtures.chain()), Action(0, 0, 0))
    assert reward == 0
    assert state.start[0] == 0
    assert state.end[0] == 3


def test_flexible_actions():
    state = reset(fixtures.flexible())
    assert feasible_actions(state) == [
        Action(0, 0, 0),
        Action(0, 0, 1),
        Action(1, 0, 0),
    ]


def test_strict_idle():
    loose = step(reset(fixtures.flexible()), Action(1, 0, 0))[0]
    strict = step(reset(fixtures.flexible(), strict_idle=True), Action(1, 0, 0))[0]
    assert feasible_actions(loose) == [Action(0, 0, 0), Action(0, 0, 1)]
    assert feasible_actions(strict) == [Action(0, 0, 1)]
    with pytest.raises(ContractViolation):
        step(strict, Action(0, 0, 0))
    # permissive masking waits for the busy machine
    state, _ = step(loose, Action(0, 0, 0))
    assert state.start[0] == 6


def test_strict_idle_falls_back_to_earliest_start():
    instance = parse_jssp("2 1\n0 3\n0 4\n")
    state = reset(instance, strict_idle=True)
    state, _ = step(state, Action(0, 0, 0))
    assert feasible_actions(state) == [Action(1, 0, 0)]


def test_extract_features_initial():
    features = rainbow_jobshop.env.extract_features(reset(fixtures.flexible()))
    assert features.op_features.shape == (3, 6)
    assert features.machine_features.shape == (2, 3)
    assert features.edge_index.shape == (2, 4)
    assert features.edge_features.tolist() == [3.0, 5.0, 4.0, 6.0]
    # unscheduled: mean processing time over candidates
    assert features.op_features[0, 2] == 4.0
    assert features.op_features[:, 0].tolist() == [0.0, 0.0, 0.0]
    assert features.op_features[:, 1].tolist() == [2.0, 1.0, 1.0]
    # estimated start of O01 is the estimated end of O00
    assert features.op_features[1, 3] == 4.0
    assert features.op_features[:, 4].tolist() == [2.0, 2.0, 1.0]
    assert features.machine_features[:, 1].tolist() == [2.0, 2.0]
    assert features.pred.tolist() == [-1, 0, -1]
    assert features.succ.tolist() == [1, -1, -1]
    assert features.job_start.tolist() == [0, 2]


def test_extract_features_after_dispatch():
    state, _ = step(reset(fixtures.flexible()), Action(0, 0, 1))
    features = rainbow_jobshop.env.extract_features(state)
    assert features.edge_index.tolist() == [[0, 1, 2], [1, 1, 0]]
    assert features.op_features[0, :4].tolist() == [1.0, 1.0, 5.0, 0.0]
    assert features.op_features[1, 3] == 5.0
    assert features.machine_features[:, 0].tolist() == [0.0, 5.0]
    assert features.machine_features[:, 1].tolist() == [1.0, 1.0]
    assert features.machine_features[:, 2].tolist() == [0.0, 5.0 / 9.0]


def test_final_schedule_chain():
    state, _ = play(reset(fixtures.chain()), [(0, 0, 0), (0, 1, 1)])
    assert rainbow_jobshop.env.final_schedule(state) == [
        ScheduledOperation(0, 0, 0, 0.0, 3.0),
        ScheduledOperation(0, 1, 1, 3.0, 7.0),
    ]


def test_final_schedule_not_terminal():
    with pytest.raises(ContractViolation):
        rainbow_jobshop.env.final_schedule(reset(fixtures.chain()))


@pytest.mark.parametrize(
    "rows",
    [
        [ScheduledOperation(0, 0, 0, 0.0, 3.0)],
        [
            ScheduledOperation(0, 0, 0, 0.0, 3.0),
            ScheduledOperation(0, 1, 1, 2.0, 6.0),
        ],
        [
            ScheduledOperation(0, 0, 1, 0.0, 3.0),
            ScheduledOperation(0, 1, 1, 3.0, 7.0),
        ],
        [
            ScheduledOperation(0, 0, 0, 0.0, 4.0),
            ScheduledOperation(0, 1, 1, 4.0, 8.0),
        ],
    ],
    ids=["missing", "precedence", "ineligible", "duration"],
)
def test_check_schedule_rejects(rows):
    with pytest.raises(ContractViolation):
        rainbow_jobshop.env.check_schedule(fixtures.chain(), rows)


def test_check_schedule_overlap():
    rows = [
        ScheduledOperation(0, 0, 0, 0.0, 3.0),
        ScheduledOperation(0, 1, 1, 3.0, 5.0),
        ScheduledOperation(1, 0, 1, 4.0, 6.0),
        ScheduledOperation(1, 1, 0, 6.0, 10.0),
    ]
    with pytest.raises(ContractViolation, match="overlap"):
        rainbow_jobshop.env.check_schedule(fixtures.oracle(), rows)


@pytest.mark.parametrize(
    "problem,n,m,seed",
    itertools.product(["jssp", "fjsp"], [3, 6], [5], [0, 1]),
)
@pytest.mark.parametrize("strict_idle", [False, True])
def test_random_rollout_is_feasible(problem, n, m, seed, strict_idle):
    (instance,) = generate_instances(problem, n, m, 1, seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    state, rewards, initial = rainbow_jobshop.env.random_rollout(
        instance, rng, strict_idle
    )
    rows = rainbow_jobshop.env.final_schedule(state)
    assert fixtures.assert_feasible(instance, rows) == state.makespan
    assert len(rewards) == instance.num_operations
    assert sum(rewards) == pytest.approx(initial - state.makespan)


def test_write_schedule_csv(tmp_path):
    state, _ = play(reset(fixtures.oracle()), fixtures.ORACLE_ORDER)
    rows = rainbow_jobshop.env.final_schedule(state)
    path = rainbow_jobshop.env.write_schedule_csv(rows, tmp_path / "schedule.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "job,op,machine,start,end"
    assert lines[1] == "0,0,0,0,3"
    assert lines[-1] == "makespan,7"
    assert len(lines) == 6


@pytest.mark.slow
@pytest.mark.parametrize(
    "problem,n,m",
    [("jssp", 6, 6), ("jssp", 10, 5), ("fjsp", 6, 6), ("fjsp", 10, 5)],
)
def test_random_policy_suite(problem, n, m):
    instances = generate_instances(problem, n, m, 1000, 2024)
    rng = np.random.Generator(np.random.PCG64(7))
    for instance in instances:
        state, rewards, initial = rainbow_jobshop.env.random_rollout(instance, rng)
        rows = rainbow_jobshop.env.final_schedule(state)
        assert rainbow_jobshop.env.check_schedule(instance, rows) == state.makespan
        assert abs(sum(rewards) - (initial - state.makespan)) < 1e-9
