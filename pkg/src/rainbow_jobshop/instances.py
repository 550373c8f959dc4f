"""Problem data model, random instance generation and benchmark file I/O

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
import math
import pathlib

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from .exceptions import InstanceParseError, ParameterError


log = structlog.get_logger()

# Operations per job for the machine counts used by the standard FJSP generator
FJSP_OPS_RANGES = {5: (4, 6), 6: (5, 7), 10: (8, 12)}

JSSP_SUFFIX = ".jss"
FJSP_SUFFIX = ".fjs"

Seed = Union[int, np.random.SeedSequence]


@dataclass(frozen=True)
class OperationSpec:
    """Candidate machines of one operation with their processing times"""

    eligible: Dict[int, int]

    def __post_init__(self):
        if not self.eligible:
            raise ParameterError("an operation needs at least one eligible machine")
        for machine, ptime in self.eligible.items():
            if machine < 0:
                raise ParameterError(f"negative machine index {machine}")
            if ptime < 1:
                raise ParameterError(f"processing time {ptime} must be >= 1")

    @property
    def mean_time(self) -> float:
        return sum(self.eligible.values()) / len(self.eligible)


@dataclass(frozen=True)
class ProblemInstance:
    """A JSSP or FJSP instance: jobs made of ordered operations"""

    num_machines: int
    jobs: Tuple[Tuple[OperationSpec, ...], ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "jobs", tuple(tuple(job) for job in self.jobs))
        if self.num_machines < 1:
            raise ParameterError("an instance needs at least one machine")
        if not self.jobs:
            raise ParameterError("an instance needs at least one job")
        for index, job in enumerate(self.jobs):
            if not job:
                raise ParameterError(f"job {index} has no operation")
            for operation in job:
                for machine in operation.eligible:
                    if machine >= self.num_machines:
                        raise ParameterError(
                            f"machine {machine} out of range for "
                            f"{self.num_machines} machines"
                        )

    @property
    def num_jobs(self) -> int:
        return len(self.jobs)

    @property
    def num_operations(self) -> int:
        return sum(len(job) for job in self.jobs)

    def is_jssp(self) -> bool:
        return all(len(op.eligible) == 1 for job in self.jobs for op in job)

    def average_flexibility(self) -> float:
        return (
            sum(len(op.eligible) for job in self.jobs for op in job)
            / self.num_operations
        )


def _rng(seed: Seed) -> np.random.Generator:
    """PCG64 stream for a seed or a spawned seed sequence"""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def generate_jssp(
    n: int, m: int, seed: Seed, ptime_lo: int = 1, ptime_hi: int = 99
) -> ProblemInstance:
    """Random JSSP: each job visits every machine once in a random order"""
    if n < 1 or m < 1:
        raise ParameterError(f"invalid size {n}x{m}")
    if not 1 <= ptime_lo <= ptime_hi:
        raise ParameterError(f"invalid processing time range [{ptime_lo}, {ptime_hi}]")
    rng = _rng(seed)
    jobs = []
    for _ in range(n):
        machines = rng.permutation(m)
        ptimes = rng.integers(ptime_lo, ptime_hi, size=m, endpoint=True)
        jobs.append(
            tuple(
                OperationSpec({int(machine): int(ptime)})
                for machine, ptime in zip(machines, ptimes)
            )
        )
    return ProblemInstance(num_machines=m, jobs=tuple(jobs))


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def generate_fjsp(
    n: int,
    m: int,
    seed: Seed,
    ops_range: Optional[Sequence[int]] = None,
    pbar_lo: int = 1,
    pbar_hi: int = 20,
    spread: float = 0.2,
) -> ProblemInstance:
    """Random FJSP with a random candidate set and times around a mean per operation

    ops_range defaults to the standard range for 5, 6 and 10 machines only.
    """
    if n < 1 or m < 1:
        raise ParameterError(f"invalid size {n}x{m}")
    if ops_range is None:
        if m not in FJSP_OPS_RANGES:
            raise ParameterError(
                f"no default operations range for {m} machines, pass ops_range"
            )
        ops_range = FJSP_OPS_RANGES[m]
    ops_lo, ops_hi = ops_range
    if ops_lo < 1 or ops_hi < ops_lo:
        raise ParameterError(f"invalid operations range [{ops_lo}, {ops_hi}]")
    if not 1 <= pbar_lo <= pbar_hi:
        raise ParameterError(f"invalid mean time range [{pbar_lo}, {pbar_hi}]")
    if not 0 <= spread < 1:
        raise ParameterError(f"spread {spread} must be in [0, 1)")

    rng = _rng(seed)
    jobs = []
    for _ in range(n):
        num_ops = int(rng.integers(ops_lo, ops_hi, endpoint=True))
        job = []
        for _ in range(num_ops):
            count = int(rng.integers(1, m, endpoint=True))
            machines = np.sort(rng.choice(m, size=count, replace=False))
            pbar = int(rng.integers(pbar_lo, pbar_hi, endpoint=True))
            samples = rng.uniform((1 - spread) * pbar, (1 + spread) * pbar, size=count)
            job.append(
                OperationSpec(
                    {
                        int(machine): max(1, _round_half_up(sample))
                        for machine, sample in zip(machines, samples)
                    }
                )
            )
        jobs.append(tuple(job))
    return ProblemInstance(num_machines=m, jobs=tuple(jobs))


def generate_instances(
    problem: str, n: int, m: int, count: int, seed: Seed, **kwargs
) -> List[ProblemInstance]:
    """Generate count instances, each from its own spawned stream"""
    if problem not in ("jssp", "fjsp"):
        raise ParameterError(f"unknown problem {problem!r}")
    if count < 0:
        raise ParameterError("count must be >= 0")
    sequence = seed if isinstance(seed, np.random.SeedSequence) else None
    if sequence is None:
        sequence = np.random.SeedSequence(seed)
    generator = generate_jssp if problem == "jssp" else generate_fjsp
    instances = []
    for index, child in enumerate(sequence.spawn(count)):
        instance = generator(n, m, child, **kwargs)
        object.__setattr__(instance, "name", f"{problem}_{n}x{m}_{index:04d}")
        instances.append(instance)
    return instances


def _data_lines(text):
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            line = text[: e.start].count(b"\n") + 1
            raise InstanceParseError(f"invalid UTF-8 ({e.reason})", line=line) from e
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield number, stripped.split()


def _integers(tokens, number):
    try:
        return [int(token) for token in tokens]
    except ValueError as e:
        raise InstanceParseError(f"non-integer token ({e})", line=number) from e


def parse_jssp(text: Union[bytes, str], name: str = "") -> ProblemInstance:
    """Parse the ORLib layout: `n m` then one line of (machine, time) pairs per job"""
    lines = list(_data_lines(text))
    if not lines:
        raise InstanceParseError("missing header", line=1)
    number, header = lines[0]
    values = _integers(header, number)
    if len(values) != 2 or values[0] < 1 or values[1] < 1:
        raise InstanceParseError("header must be `n m` with n, m >= 1", line=number)
    n, m = values
    if len(lines) - 1 < n:
        raise InstanceParseError(f"expected {n} job lines, got {len(lines) - 1}")
    if len(lines) - 1 > n:
        raise InstanceParseError("unexpected data after last job", line=lines[n + 1][0])
    jobs = []
    for number, tokens in lines[1:]:
        values = _integers(tokens, number)
        if len(values) != 2 * m:
            raise InstanceParseError(
                f"expected {m} machine/time pairs, got {len(values) / 2:g}", line=number
            )
        job = []
        for machine, ptime in zip(values[0::2], values[1::2]):
            if not 0 <= machine < m:
                raise InstanceParseError(f"machine {machine} out of range", line=number)
            if ptime < 1:
                raise InstanceParseError(f"processing time {ptime} < 1", line=number)
            job.append(OperationSpec({machine: ptime}))
        jobs.append(tuple(job))
    return ProblemInstance(num_machines=m, jobs=tuple(jobs), name=name)


def serialize_jssp(inst: ProblemInstance) -> bytes:
    if not inst.is_jssp():
        raise TypeError(
            "serialize_jssp needs exactly one eligible machine per operation"
        )
    rows = [f"{inst.num_jobs} {inst.num_machines}"]
    for job in inst.jobs:
        pairs = []
        for operation in job:
            ((machine, ptime),) = operation.eligible.items()
            pairs.append(f"{machine} {ptime}")
        rows.append(" ".join(pairs))
    return ("\n".join(rows) + "\n").encode("utf-8")


def parse_fjsp(text: Union[bytes, str], name: str = "") -> ProblemInstance:
    """Parse the Brandimarte layout with 1-based machine ids"""
    lines = list(_data_lines(text))
    if not lines:
        raise InstanceParseError("missing header", line=1)
    number, header = lines[0]
    if len(header) not in (2, 3):
        raise InstanceParseError("header must be `n m [avg_flex]`", line=number)
    n, m = _integers(header[:2], number)
    if n < 1 or m < 1:
        raise InstanceParseError("n and m must be >= 1", line=number)
    if len(lines) - 1 < n:
        raise InstanceParseError(f"expected {n} job lines, got {len(lines) - 1}")
    if len(lines) - 1 > n:
        raise InstanceParseError("unexpected data after last job", line=lines[n + 1][0])
    jobs = []
    for number, tokens in lines[1:]:
        values = _integers(tokens, number)
        if not values or values[0] < 1:
            raise InstanceParseError(
                "job needs a positive operation count", line=number
            )
        position = 1
        job = []
        for _ in range(values[0]):
            if position >= len(values):
                raise InstanceParseError("missing operations", line=number)
            count = values[position]
            position += 1
            pairs = values[position : position + 2 * count]
            if count < 1 or len(pairs) != 2 * count:
                raise InstanceParseError("candidate count mismatch", line=number)
            position += 2 * count
            eligible = {}
            for machine, ptime in zip(pairs[0::2], pairs[1::2]):
                if not 1 <= machine <= m:
                    raise InstanceParseError(
                        f"machine id {machine} out of range", line=number
                    )
                if machine - 1 in eligible:
                    raise InstanceParseError(
                        f"duplicate machine {machine}", line=number
                    )
                if ptime < 1:
                    raise InstanceParseError(
                        f"processing time {ptime} < 1", line=number
                    )
                eligible[machine - 1] = ptime
            job.append(OperationSpec(eligible))
        if position != len(values):
            raise InstanceParseError("candidate count mismatch", line=number)
        jobs.append(tuple(job))
    return ProblemInstance(num_machines=m, jobs=tuple(jobs), name=name)


def serialize_fjsp(inst: ProblemInstance) -> bytes:
    rows = [f"{inst.num_jobs} {inst.num_machines} {inst.average_flexibility():g}"]
    for job in inst.jobs:
        tokens = [str(len(job))]
        for operation in job:
            tokens.append(str(len(operation.eligible)))
            for machine, ptime in operation.eligible.items():
                tokens.append(f"{machine + 1} {ptime}")
        rows.append(" ".join(tokens))
    return ("\n".join(rows) + "\n").encode("utf-8")


def write_instance(path: pathlib.Path, inst: ProblemInstance) -> pathlib.Path:
    """Write an instance, the suffix selects the layout"""
    path = pathlib.Path(path)
    if path.suffix == JSSP_SUFFIX:
        path.write_bytes(serialize_jssp(inst))
    elif path.suffix == FJSP_SUFFIX:
        path.write_bytes(serialize_fjsp(inst))
    else:
        raise ParameterError(f"unknown instance suffix {path.suffix!r}")
    return path


def load_instance(path: pathlib.Path) -> ProblemInstance:
    path = pathlib.Path(path)
    if path.suffix == JSSP_SUFFIX:
        parser = parse_jssp
    elif path.suffix == FJSP_SUFFIX:
        parser = parse_fjsp
    else:
        raise InstanceParseError(f"unknown instance suffix {path.suffix!r}", path=path)
    try:
        return parser(path.read_bytes(), name=path.stem)
    except InstanceParseError as e:
        raise InstanceParseError(e.reason, line=e.line, path=path) from e


def load_instance_dir(directory: pathlib.Path) -> List[ProblemInstance]:
    """Load every instance file of a directory, sorted by file name"""
    directory = pathlib.Path(directory)
    paths = sorted(
        p for p in directory.iterdir() if p.suffix in (JSSP_SUFFIX, FJSP_SUFFIX)
    )
    log.debug("Loading instances", directory=str(directory), count=len(paths))
    return [load_instance(path) for path in paths]


def read_references(path: pathlib.Path) -> Dict[str, float]:
    """Read `instance_name,reference_makespan` rows, a header row is optional"""
    path = pathlib.Path(path)
    try:
        frame = pd.read_csv(
            path,
            header=None,
            names=["instance", "reference"],
            dtype=str,
            skip_blank_lines=False,
        )
    except pd.errors.EmptyDataError:
        return {}
    except pd.errors.ParserError as e:
        raise InstanceParseError(str(e), path=path) from e
    references = {}
    for index, row in frame.iterrows():
        line = index + 1
        if pd.isna(row.instance):
            continue  # blank line
        name = row.instance.strip()
        if line == 1 and name == "instance_name":
            continue
        try:
            value = float(row.reference)
            if math.isnan(value):
                raise ValueError("missing value")
        except (TypeError, ValueError) as e:
            raise InstanceParseError(
                f"reference {row.reference!r} is not a number", line=line, path=path
            ) from e
        if name in references:
            raise InstanceParseError(
                f"duplicate instance {name!r}", line=line, path=path
            )
        references[name] = value
    return references
