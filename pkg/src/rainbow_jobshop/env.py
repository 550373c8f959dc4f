"""Scheduling MDP: partial schedules, feasible actions, transitions and node features

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

A state is never mutated once returned: step() works on a copy, so states can
be kept in replay buffers and trajectories as they are.
"""
import pathlib

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from .exceptions import ContractViolation
from .instances import ProblemInstance


log = structlog.get_logger()

NUM_OP_FEATURES = 6
NUM_MACHINE_FEATURES = 3


class Action(NamedTuple):
    job: int
    op: int
    machine: int


class ScheduledOperation(NamedTuple):
    job: int
    op: int
    machine: int
    start: float
    end: float


@dataclass
class FeatureTensors:
    """Raw node and edge features of one state

    edge_index holds (operation, machine) pairs of the remaining disjunctive
    edges, pred/succ give the job neighbours of every operation (-1 for the
    Start/End dummies) and job_start the flat index of the first operation of
    every job.
    """

    op_features: np.ndarray
    machine_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    pred: np.ndarray
    succ: np.ndarray
    job_start: np.ndarray

    @property
    def num_operations(self):
        return self.op_features.shape[0]

    @property
    def num_machines(self):
        return self.machine_features.shape[0]


class _Layout:
    """Index tables of an instance, shared by all the states of its episodes"""

    def __init__(self, instance: ProblemInstance):
        self.job_start = []
        self.job_length = []
        self.op_job = []
        self.eligible = []
        self.mean_time = []
        pred, succ = [], []
        edge_op, edge_machine, edge_time = [], [], []
        flat = 0
        for job_index, job in enumerate(instance.jobs):
            self.job_start.append(flat)
            self.job_length.append(len(job))
            for position, operation in enumerate(job):
                candidates = sorted(operation.eligible.items())
                self.op_job.append(job_index)
                self.eligible.append(candidates)
                self.mean_time.append(operation.mean_time)
                pred.append(flat - 1 if position > 0 else -1)
                succ.append(flat + 1 if position < len(job) - 1 else -1)
                for machine, ptime in candidates:
                    edge_op.append(flat)
                    edge_machine.append(machine)
                    edge_time.append(float(ptime))
                flat += 1
        self.num_operations = flat
        self.num_machines = instance.num_machines
        self.job_end = [s + n - 1 for s, n in zip(self.job_start, self.job_length)]
        self.pred = np.asarray(pred, dtype=np.int64)
        self.succ = np.asarray(succ, dtype=np.int64)
        self.edge_op = np.asarray(edge_op, dtype=np.int64)
        self.edge_machine = np.asarray(edge_machine, dtype=np.int64)
        self.edge_time = np.asarray(edge_time, dtype=np.float64)
        self.flexibility = np.asarray(
            [len(candidates) for candidates in self.eligible], dtype=np.float64
        )


class ScheduleState:
    """Partial schedule S(t)

    start/end hold actual times of scheduled operations and the recursive
    precedence estimate of the others.
    """

    __slots__ = (
        "instance",
        "layout",
        "strict_idle",
        "scheduled",
        "assigned",
        "ptime",
        "start",
        "end",
        "machine_available",
        "machine_busy",
        "next_op",
        "t",
        "makespan",
    )

    def copy(self) -> "ScheduleState":
        new = ScheduleState.__new__(ScheduleState)
        new.instance = self.instance
        new.layout = self.layout
        new.strict_idle = self.strict_idle
        new.scheduled = list(self.scheduled)
        new.assigned = list(self.assigned)
        new.ptime = list(self.ptime)
        new.start = list(self.start)
        new.end = list(self.end)
        new.machine_available = list(self.machine_available)
        new.machine_busy = list(self.machine_busy)
        new.next_op = list(self.next_op)
        new.t = self.t
        new.makespan = self.makespan
        return new

    def op_id(self, job: int, op: int) -> int:
        return self.layout.job_start[job] + op

    def neighbor_machines(self, job: int, op: int) -> List[int]:
        """Machines still connected to an operation by a disjunctive edge"""
        flat = self.op_id(job, op)
        if self.scheduled[flat]:
            return [self.assigned[flat]]
        return [machine for machine, _ in self.layout.eligible[flat]]

    def job_completion(self, job: int) -> float:
        return self.end[self.layout.job_end[job]]

    def __repr__(self):
        return (
            f"ScheduleState(t={self.t}/{self.layout.num_operations}, "
            f"makespan={self.makespan:g})"
        )


def _propagate(state: ScheduleState, job: int):
    """Re-estimate the unscheduled suffix of a job then the partial makespan"""
    layout = state.layout
    first = layout.job_start[job] + state.next_op[job]
    last = layout.job_end[job]
    for flat in range(first, last + 1):
        previous = flat - 1 if flat > layout.job_start[job] else None
        state.start[flat] = state.end[previous] if previous is not None else 0.0
        state.end[flat] = state.start[flat] + layout.mean_time[flat]
    state.makespan = max(state.end[flat] for flat in layout.job_end)


def reset(instance: ProblemInstance, strict_idle: bool = False) -> ScheduleState:
    """Initial state: nothing scheduled, every disjunctive edge present"""
    layout = _Layout(instance)
    state = ScheduleState.__new__(ScheduleState)
    state.instance = instance
    state.layout = layout
    state.strict_idle = strict_idle
    state.scheduled = [False] * layout.num_operations
    state.assigned = [None] * layout.num_operations
    state.ptime = list(layout.mean_time)
    state.start = [0.0] * layout.num_operations
    state.end = [0.0] * layout.num_operations
    state.machine_available = [0.0] * instance.num_machines
    state.machine_busy = [0.0] * instance.num_machines
    state.next_op = [0] * instance.num_jobs
    state.t = 0
    state.makespan = 0.0
    for job in range(instance.num_jobs):
        _propagate(state, job)
    return state


def is_terminal(state: ScheduleState) -> bool:
    return state.t == state.layout.num_operations


def _ready_time(state: ScheduleState, flat: int) -> float:
    previous = state.layout.pred[flat]
    return state.end[previous] if previous >= 0 else 0.0


def feasible_actions(state: ScheduleState) -> List[Action]:
    """Dispatchable (operation, machine) pairs sorted by (job, op, machine)"""
    layout = state.layout
    actions = []
    for job, position in enumerate(state.next_op):
        if position == layout.job_length[job]:
            continue
        flat = layout.job_start[job] + position
        for machine, _ in layout.eligible[flat]:
            actions.append(Action(job, position, machine))
    if state.strict_idle and actions:
        actions = _idle_machines_only(state, actions)
    return actions


def _idle_machines_only(state: ScheduleState, actions: List[Action]) -> List[Action]:
    """Keep pairs whose machine is free when the operation becomes ready

    When no pair qualifies, the pairs with the earliest possible start are kept.
    """
    starts = []
    idle = []
    for action in actions:
        ready = _ready_time(state, state.op_id(action.job, action.op))
        available = state.machine_available[action.machine]
        starts.append(max(ready, available))
        if available <= ready:
            idle.append(action)
    if idle:
        return idle
    earliest = min(starts)
    return [action for action, start in zip(actions, starts) if start == earliest]


def _check_action(state: ScheduleState, action: Action):
    layout = state.layout
    job, op, machine = action
    if not 0 <= job < len(state.next_op):
        raise ContractViolation(f"unknown job in {action}")
    if state.next_op[job] != op:
        raise ContractViolation(
            f"{action} is not dispatchable, next operation of job {job} is "
            f"{state.next_op[job]}"
        )
    flat = layout.job_start[job] + op
    if machine not in dict(layout.eligible[flat]):
        raise ContractViolation(f"machine {machine} not eligible in {action}")
    if state.strict_idle and action not in feasible_actions(state):
        raise ContractViolation(f"machine {machine} is busy in {action}")


def step(state: ScheduleState, action: Action) -> Tuple[ScheduleState, float]:
    """Dispatch one operation; the reward is minus the partial makespan increase"""
    if is_terminal(state):
        raise ContractViolation("step on a terminal state")
    action = Action(*action)
    _check_action(state, action)
    layout = state.layout
    new = state.copy()
    job, op, machine = action
    flat = layout.job_start[job] + op
    ptime = float(dict(layout.eligible[flat])[machine])
    start = max(new.machine_available[machine], _ready_time(new, flat))

    new.scheduled[flat] = True
    new.assigned[flat] = machine
    new.ptime[flat] = ptime
    new.start[flat] = start
    new.end[flat] = start + ptime
    new.machine_available[machine] = start + ptime
    new.machine_busy[machine] += ptime
    new.next_op[job] += 1
    new.t += 1
    _propagate(new, job)
    return new, state.makespan - new.makespan


def extract_features(state: ScheduleState) -> FeatureTensors:
    """Six features per operation, three per machine, processing time per edge"""
    layout = state.layout
    scheduled = np.asarray(state.scheduled, dtype=bool)
    assigned = np.asarray(
        [-1 if machine is None else machine for machine in state.assigned],
        dtype=np.int64,
    )
    op_job = layout.op_job
    remaining = np.asarray(
        [layout.job_length[job] - state.next_op[job] for job in op_job],
        dtype=np.float64,
    )
    completion = np.asarray(
        [state.end[layout.job_end[job]] for job in op_job], dtype=np.float64
    )
    op_features = np.stack(
        [
            scheduled.astype(np.float64),
            np.where(scheduled, 1.0, layout.flexibility),
            np.asarray(state.ptime, dtype=np.float64),
            np.asarray(state.start, dtype=np.float64),
            remaining,
            completion,
        ],
        axis=1,
    )

    edge_scheduled = scheduled[layout.edge_op]
    keep = ~edge_scheduled | (layout.edge_machine == assigned[layout.edge_op])
    edge_index = np.stack([layout.edge_op[keep], layout.edge_machine[keep]])
    edge_features = layout.edge_time[keep]

    pending_ops = np.bincount(
        layout.edge_machine[~edge_scheduled], minlength=layout.num_machines
    ).astype(np.float64)
    busy = np.asarray(state.machine_busy, dtype=np.float64)
    utilization = busy / state.makespan if state.makespan > 0 else np.zeros_like(busy)
    machine_features = np.stack(
        [
            np.asarray(state.machine_available, dtype=np.float64),
            pending_ops,
            utilization,
        ],
        axis=1,
    )
    return FeatureTensors(
        op_features=op_features,
        machine_features=machine_features,
        edge_index=edge_index,
        edge_features=edge_features,
        pred=layout.pred,
        succ=layout.succ,
        job_start=np.asarray(layout.job_start, dtype=np.int64),
    )


def check_schedule(
    instance: ProblemInstance, rows: Sequence[ScheduledOperation]
) -> float:
    """Verify a complete schedule and return its makespan

    Checks eligibility, durations, job precedence and machine overlap without
    relying on any state bookkeeping.
    """
    expected = {
        (job, op) for job, ops in enumerate(instance.jobs) for op in range(len(ops))
    }
    seen = {}
    for row in rows:
        key = (row.job, row.op)
        if key not in expected:
            raise ContractViolation(f"unknown operation {key}")
        if key in seen:
            raise ContractViolation(f"operation {key} scheduled twice")
        eligible = instance.jobs[row.job][row.op].eligible
        if row.machine not in eligible:
            raise ContractViolation(f"machine {row.machine} not eligible for {key}")
        if row.start < 0 or row.end - row.start != eligible[row.machine]:
            raise ContractViolation(f"wrong timing for {key}: {row}")
        seen[key] = row
    if len(seen) != len(expected):
        raise ContractViolation(f"{len(expected) - len(seen)} operations missing")

    for job, ops in enumerate(instance.jobs):
        for op in range(1, len(ops)):
            if seen[(job, op)].start < seen[(job, op - 1)].end:
                raise ContractViolation(f"precedence violated at {(job, op)}")

    by_machine = {}
    for row in rows:
        by_machine.setdefault(row.machine, []).append(row)
    for machine, machine_rows in by_machine.items():
        machine_rows.sort(key=lambda r: (r.start, r.end))
        for before, after in zip(machine_rows, machine_rows[1:]):
            if after.start < before.end:
                raise ContractViolation(
                    f"overlap on machine {machine}: {before} and {after}"
                )
    return max(row.end for row in rows)


def final_schedule(state: ScheduleState) -> List[ScheduledOperation]:
    """Complete schedule of a terminal state, checked for feasibility"""
    if not is_terminal(state):
        raise ContractViolation(
            f"schedule requested at t={state.t} of {state.layout.num_operations}"
        )
    layout = state.layout
    rows = [
        ScheduledOperation(
            job=layout.op_job[flat],
            op=flat - layout.job_start[layout.op_job[flat]],
            machine=state.assigned[flat],
            start=state.start[flat],
            end=state.end[flat],
        )
        for flat in range(layout.num_operations)
    ]
    makespan = check_schedule(state.instance, rows)
    if makespan != state.makespan:
        raise ContractViolation(
            f"makespan mismatch: schedule {makespan}, state {state.makespan}"
        )
    return rows


def random_rollout(
    instance: ProblemInstance,
    rng: np.random.Generator,
    strict_idle: bool = False,
) -> Tuple[ScheduleState, List[float], float]:
    """Play uniformly random feasible actions until the end of the episode

    Returns the terminal state, the rewards and the initial partial makespan.
    """
    state = reset(instance, strict_idle=strict_idle)
    initial = state.makespan
    rewards = []
    while not is_terminal(state):
        actions = feasible_actions(state)
        state, reward = step(state, actions[int(rng.integers(len(actions)))])
        rewards.append(reward)
    return state, rewards, initial


def write_schedule_csv(
    rows: Sequence[ScheduledOperation],
    path: pathlib.Path,
    makespan: Optional[float] = None,
) -> pathlib.Path:
    """Write `job,op,machine,start,end` rows followed by `makespan,<value>`"""
    path = pathlib.Path(path)
    frame = pd.DataFrame(list(rows), columns=list(ScheduledOperation._fields))
    if makespan is None:
        makespan = max((row.end for row in rows), default=0.0)
    with path.open("w", newline="") as handle:
        frame.to_csv(handle, index=False, float_format="%g")
        handle.write(f"makespan,{makespan:g}\n")
    return path
