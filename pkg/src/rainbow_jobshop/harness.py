"""Training protocol, greedy and multi-start evaluation, statistics and reports

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
import contextlib
import dataclasses
import itertools
import math
import pathlib
import time
import typing

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
import pandas as pd
import structlog
import torch

from scipy import stats

from .encoder import (
    Checkpoint,
    EncoderConfig,
    SchedulingNetwork,
    masked_select,
    save_checkpoint,
    score_states,
)
from .env import (
    ScheduledOperation,
    ScheduleState,
    feasible_actions,
    final_schedule,
    is_terminal,
    reset,
    step,
)
from .exceptions import ParameterError
from .instances import FJSP_OPS_RANGES, ProblemInstance, generate_instances
from .policy_rl import ALGORITHMS as PG_ALGORITHMS, PGConfig, PolicyGradientAgent
from .utils import int_range, str2bool
from .value_rl import DQNAgent, RainbowConfig


log = structlog.get_logger()

ALGORITHMS = ("dqn",) + PG_ALGORITHMS
EVAL_COLUMNS = ["instance", "makespan", "reference", "gap_pct", "seconds"]
SUMMARY_COLUMNS = [
    "name",
    "algorithm",
    "instances",
    "mean_makespan",
    "mean_gap_pct",
    "mean_seconds",
    "training_minutes",
    "training_deviation_pct",
]
METRICS_COLUMNS = [
    "algorithm",
    "episode",
    "loss",
    "epsilon",
    "train_makespan",
    "validation_makespan",
    "seconds",
]
VALIDATION_COLUMNS = ["algorithm", "episode", "mean_makespan"]
SIGNIFICANCE_COLUMNS = ["alg_a", "alg_b", "p_value", "significant"]
NESTED_CONFIGS = {"encoder": EncoderConfig, "rainbow": RainbowConfig, "pg": PGConfig}
MIN_WILCOXON_PAIRS = 6
EXACT_WILCOXON_LIMIT = 25
# tables whose row labels are data
INDEXED_TABLES = {"significance_matrix.csv"}


@dataclass
class RunConfig:
    problem: str = "fjsp"
    n: int = 6
    m: int = 6
    algorithm: str = "dqn"
    # None: 3000 episodes up to 10 jobs, 5000 above
    episodes: Optional[int] = None
    validation_size: int = 100
    validation_period: int = 10
    seed: int = 0
    output: str = "output"
    workers: int = 1
    # FJSP operations per job, needed for machine counts without a standard range
    ops_range: Optional[Tuple[int, int]] = None
    pbar_lo: int = 1
    pbar_hi: int = 20
    spread: float = 0.2
    ptime_lo: int = 1
    ptime_hi: int = 99
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    rainbow: Optional[RainbowConfig] = None
    pg: Optional[PGConfig] = None

    def __post_init__(self):
        if self.problem not in ("jssp", "fjsp"):
            raise ParameterError(f"unknown problem {self.problem!r}")
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"unknown algorithm {self.algorithm!r}")
        if self.episodes is None:
            self.episodes = 3000 if self.n <= 10 else 5000
        if self.episodes < 1:
            raise ParameterError("episodes must be >= 1")
        if self.validation_period < 1:
            raise ParameterError("validation_period must be >= 1")
        if self.validation_size < 1 or self.workers < 1:
            raise ParameterError("validation_size and workers must be >= 1")
        if (
            self.problem == "fjsp"
            and self.ops_range is None
            and self.m not in FJSP_OPS_RANGES
        ):
            raise ParameterError(
                f"no default operations range for {self.m} machines, set ops_range"
            )
        if self.algorithm == "dqn" and self.rainbow is None:
            self.rainbow = RainbowConfig.for_problem(self.problem)
        if self.algorithm != "dqn" and self.pg is None:
            self.pg = PGConfig(algorithm=self.algorithm)

    @property
    def label(self) -> str:
        return self.rainbow.label if self.algorithm == "dqn" else self.algorithm

    @property
    def instances_per_episode(self) -> int:
        return 1 if self.algorithm == "dqn" else self.pg.parallel

    def generator_options(self) -> Dict[str, Any]:
        if self.problem == "jssp":
            return {"ptime_lo": self.ptime_lo, "ptime_hi": self.ptime_hi}
        return {
            "ops_range": self.ops_range,
            "pbar_lo": self.pbar_lo,
            "pbar_hi": self.pbar_hi,
            "spread": self.spread,
        }


def _fields(cls) -> Dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(spec: dataclasses.Field, value: Any) -> Any:
    kind = spec.type
    args = [a for a in typing.get_args(kind) if a is not type(None)]
    if args:
        kind = args[0]
    try:
        if typing.get_origin(kind) is tuple:
            return int_range(value)
        if isinstance(value, str):
            if kind is bool:
                return str2bool(value)
            if kind in (int, float):
                return kind(value)
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
    except (TypeError, ValueError) as e:
        raise ParameterError(f"invalid value {value!r} for {spec.name}") from e
    return value


def build_run_config(values: Mapping[str, Any]) -> RunConfig:
    """RunConfig from flat keys, each key set on every config holding that field"""
    run_fields = {
        name: spec
        for name, spec in _fields(RunConfig).items()
        if name not in NESTED_CONFIGS
    }
    known = set(run_fields)
    for cls in NESTED_CONFIGS.values():
        known |= set(_fields(cls))
    unknown = sorted(set(values) - known)
    if unknown:
        raise ParameterError(f"unknown configuration keys {unknown}")

    def pick(specs):
        return {
            name: _coerce(spec, values[name])
            for name, spec in specs.items()
            if name in values and values[name] is not None
        }

    run_values = pick(run_fields)
    problem = run_values.get("problem", "fjsp")
    algorithm = run_values.get("algorithm", "dqn")
    rainbow = pg = None
    if algorithm == "dqn":
        rainbow = RainbowConfig.for_problem(problem, **pick(_fields(RainbowConfig)))
    elif algorithm in PG_ALGORITHMS:
        pg = PGConfig(**{**pick(_fields(PGConfig)), "algorithm": algorithm})
    return RunConfig(
        **run_values,
        encoder=EncoderConfig(**pick(_fields(EncoderConfig))),
        rainbow=rainbow,
        pg=pg,
    )


def make_agent(run: RunConfig, seed, dtype: torch.dtype = torch.float32):
    if run.algorithm == "dqn":
        return DQNAgent(run.rainbow, run.encoder, seed=seed, dtype=dtype)
    return PolicyGradientAgent(run.pg, run.encoder, seed=seed, dtype=dtype)


def scoring_mode(algorithm: str) -> str:
    return "q" if algorithm == "dqn" else "policy"


@contextlib.contextmanager
def evaluation_mode(network: SchedulingNetwork):
    """Noise off for the duration of an evaluation"""
    network.set_noise_mode("zero")
    try:
        yield network
    finally:
        network.set_noise_mode("sampled")


def rollout_greedy(
    network: SchedulingNetwork,
    mode: str,
    instance: ProblemInstance,
    first_actions: Sequence = (None,),
) -> List[ScheduleState]:
    """Argmax decoding of one copy per first action (None leaves it free)"""
    states = []
    for action in first_actions:
        state = reset(instance)
        if action is not None:
            state, _ = step(state, action)
        states.append(state)
    while True:
        active = [i for i, state in enumerate(states) if not is_terminal(state)]
        if not active:
            return states
        candidates, scores = score_states(network, [states[i] for i in active], mode)
        for slot, index in enumerate(active):
            choice = masked_select(scores[slot], np.ones(len(scores[slot]), bool))
            states[index], _ = step(states[index], candidates[slot][choice])


def gap(makespan: float, reference: float) -> float:
    """Percentage excess over the reference makespan"""
    if not reference > 0:
        raise ParameterError(f"reference makespan must be > 0, got {reference}")
    return 100.0 * (makespan - reference) / reference


@dataclass
class EvalReport:
    name: str
    label: str
    instances: List[str] = field(default_factory=list)
    makespans: List[float] = field(default_factory=list)
    references: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    starts: List[int] = field(default_factory=list)
    # best schedule per instance, empty when read back from a table
    schedules: List[List[ScheduledOperation]] = field(
        default_factory=list, repr=False
    )

    @property
    def gaps(self) -> List[float]:
        return [
            gap(c, ref) if not math.isnan(ref) else float("nan")
            for c, ref in zip(self.makespans, self.references)
        ]

    @property
    def mean_makespan(self) -> float:
        return float(np.mean(self.makespans)) if self.makespans else float("nan")

    @property
    def mean_gap(self) -> float:
        gaps = [g for g in self.gaps if not math.isnan(g)]
        return float(np.mean(gaps)) if gaps else float("nan")

    @property
    def mean_seconds(self) -> float:
        return float(np.mean(self.seconds)) if self.seconds else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "instance": self.instances,
                "makespan": self.makespans,
                "reference": self.references,
                "gap_pct": self.gaps,
                "seconds": self.seconds,
            },
            columns=EVAL_COLUMNS,
        )

    @classmethod
    def from_frame(cls, name: str, label: str, frame: pd.DataFrame) -> "EvalReport":
        missing = set(EVAL_COLUMNS) - set(frame.columns)
        if missing:
            raise ParameterError(f"evaluation table {name} lacks {sorted(missing)}")
        return cls(
            name=name,
            label=label,
            instances=[str(v) for v in frame["instance"]],
            makespans=[float(v) for v in frame["makespan"]],
            references=[float(v) for v in frame["reference"]],
            seconds=[float(v) for v in frame["seconds"]],
            starts=[1] * len(frame),
        )


def _solve(network, mode, instance, multistart):
    started = time.monotonic()
    with torch.no_grad():
        (best,) = rollout_greedy(network, mode, instance)
        schedule = final_schedule(best)
        starts = 1
        if multistart:
            first_actions = feasible_actions(reset(instance))
            starts = len(first_actions)
            for state in rollout_greedy(network, mode, instance, first_actions):
                rows = final_schedule(state)
                if state.makespan < best.makespan:
                    best, schedule = state, rows
    return best.makespan, schedule, time.monotonic() - started, starts


def _evaluate(
    network: SchedulingNetwork,
    mode: str,
    instances: Sequence[ProblemInstance],
    references: Optional[Mapping[str, float]],
    workers: int,
    name: str,
    label: str,
    multistart: bool,
) -> EvalReport:
    references = references or {}

    def solve(instance):
        return _solve(network, mode, instance, multistart)

    with evaluation_mode(network):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(solve, instances))
        else:
            results = [solve(instance) for instance in instances]
    report = EvalReport(name=name, label=label)
    for instance, (makespan, schedule, seconds, starts) in zip(instances, results):
        report.instances.append(instance.name)
        report.makespans.append(makespan)
        report.references.append(float(references.get(instance.name, float("nan"))))
        report.seconds.append(seconds)
        report.starts.append(starts)
        report.schedules.append(schedule)
    log.info(
        "Evaluation done",
        name=name,
        instances=len(instances),
        mean_makespan=report.mean_makespan,
        mean_gap=report.mean_gap,
        multistart=multistart,
    )
    return report


def _checkpoint_label(checkpoint: Checkpoint) -> str:
    return checkpoint.metadata.get("label", checkpoint.algorithm)


def evaluate_greedy(
    checkpoint: Checkpoint,
    instances: Sequence[ProblemInstance],
    references: Optional[Mapping[str, float]] = None,
    workers: int = 1,
    name: str = "greedy",
) -> EvalReport:
    """Argmax decoding with noise off, every schedule checked for feasibility"""
    return _evaluate(
        checkpoint.network,
        scoring_mode(checkpoint.algorithm),
        instances,
        references,
        workers,
        name,
        _checkpoint_label(checkpoint),
        multistart=False,
    )


def evaluate_multistart(
    checkpoint: Checkpoint,
    instances: Sequence[ProblemInstance],
    references: Optional[Mapping[str, float]] = None,
    workers: int = 1,
    name: str = "multistart",
) -> EvalReport:
    """Best of the greedy rollout and one greedy copy per initial action"""
    return _evaluate(
        checkpoint.network,
        scoring_mode(checkpoint.algorithm),
        instances,
        references,
        workers,
        name,
        _checkpoint_label(checkpoint),
        multistart=True,
    )


def validate(agent, instances: Sequence[ProblemInstance], workers: int = 1) -> float:
    report = _evaluate(
        agent.network,
        agent.scoring_mode,
        instances,
        None,
        workers,
        "validation",
        "",
        multistart=False,
    )
    return report.mean_makespan


@dataclass
class TrainResult:
    checkpoint: Optional[pathlib.Path]
    best_validation: float
    best_episode: int
    metrics: pd.DataFrame
    validation: pd.DataFrame
    training_minutes: float


def should_validate(episode: int, run: RunConfig) -> bool:
    return (
        episode == 1 or episode % run.validation_period == 0 or episode == run.episodes
    )


def train(run: RunConfig, dtype: torch.dtype = torch.float32) -> TrainResult:
    """Train on fresh instances every episode, keep the best validated model"""
    output = pathlib.Path(run.output)
    output.mkdir(parents=True, exist_ok=True)
    validation_seq, training_seq, agent_seq = np.random.SeedSequence(run.seed).spawn(3)
    validation_set = generate_instances(
        run.problem,
        run.n,
        run.m,
        run.validation_size,
        validation_seq,
        **run.generator_options(),
    )
    training_rng = np.random.Generator(np.random.PCG64(training_seq))
    agent = make_agent(run, agent_seq, dtype)
    algorithm_config = dataclasses.asdict(run.rainbow or run.pg)

    metrics = []
    curve = []
    best = math.inf
    best_episode = 0
    checkpoint = None
    started = time.monotonic()
    log.info(
        "Training started",
        label=run.label,
        problem=run.problem,
        size=f"{run.n}x{run.m}",
        episodes=run.episodes,
        seed=run.seed,
    )
    try:
        for episode in range(1, run.episodes + 1):
            episode_started = time.monotonic()
            instances = generate_instances(
                run.problem,
                run.n,
                run.m,
                run.instances_per_episode,
                int(training_rng.integers(2**63)),
                **run.generator_options(),
            )
            result = agent.train_episode(instances, episode, run.episodes)
            validation_makespan = float("nan")
            if should_validate(episode, run):
                validation_makespan = validate(agent, validation_set, run.workers)
                curve.append(
                    {
                        "algorithm": run.label,
                        "episode": episode,
                        "mean_makespan": validation_makespan,
                    }
                )
                log.info(
                    "Validation done",
                    episode=episode,
                    mean_makespan=validation_makespan,
                    best=min(best, validation_makespan),
                )
                if validation_makespan < best:
                    best = validation_makespan
                    best_episode = episode
                    checkpoint = save_checkpoint(
                        output / "best.pt",
                        agent.network,
                        run.algorithm,
                        run.problem,
                        algorithm_config,
                        {
                            "episode": episode,
                            "validation_makespan": validation_makespan,
                            "label": run.label,
                            "seed": run.seed,
                            "n": run.n,
                            "m": run.m,
                        },
                    )
            metrics.append(
                {
                    "algorithm": run.label,
                    "episode": episode,
                    "loss": result.loss,
                    "epsilon": result.epsilon,
                    "train_makespan": result.makespan,
                    "validation_makespan": validation_makespan,
                    "seconds": time.monotonic() - episode_started,
                }
            )
            log.debug("Episode done", **metrics[-1])
    finally:
        minutes = (time.monotonic() - started) / 60.0
        metrics_frame = pd.DataFrame(metrics, columns=METRICS_COLUMNS)
        curve_frame = pd.DataFrame(curve, columns=VALIDATION_COLUMNS)
        metrics_frame.to_csv(output / "metrics.csv", index=False)
        curve_frame.to_csv(output / "validation.csv", index=False)
        pd.DataFrame(
            [
                {
                    "algorithm": run.label,
                    "episodes": len(metrics),
                    "training_minutes": minutes,
                }
            ]
        ).to_csv(output / "training.csv", index=False)

    log.info(
        "Training done",
        label=run.label,
        best_validation=best,
        best_episode=best_episode,
        minutes=minutes,
        checkpoint=str(checkpoint),
    )
    return TrainResult(
        checkpoint=checkpoint,
        best_validation=best,
        best_episode=best_episode,
        metrics=metrics_frame,
        validation=curve_frame,
        training_minutes=minutes,
    )


class WilcoxonResult(NamedTuple):
    statistic: float
    p_value: float
    significant: bool
    indeterminate: bool
    n: int


def _exact_lower_tail(doubled_ranks: np.ndarray, threshold: int) -> float:
    """P(W+ <= threshold) under the null, ranks and threshold doubled"""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for rank in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[rank:] = counts[: total + 1 - rank]
        counts = counts + shifted
    return float(counts[: threshold + 1].sum() / 2.0 ** len(doubled_ranks))


def wilcoxon(
    a: Sequence[float], b: Sequence[float], level: float = 0.05
) -> WilcoxonResult:
    """Two-sided signed-rank test on paired samples, zero differences dropped

    Exact null distribution over the (possibly tied) ranks up to
    EXACT_WILCOXON_LIMIT pairs, normal approximation with tie correction above.
    scipy.stats.wilcoxon falls back to the normal approximation whenever ranks
    are tied, so the exact tail is computed here instead.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"paired samples differ in length: {len(a)} and {len(b)}")
    diffs = a - b
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n < MIN_WILCOXON_PAIRS:
        return WilcoxonResult(float("nan"), 1.0, False, True, n)
    magnitudes = np.abs(diffs)
    ranks = stats.rankdata(magnitudes)
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    statistic = min(w_plus, w_minus)
    if n <= EXACT_WILCOXON_LIMIT:
        doubled = np.rint(2 * ranks).astype(np.int64)
        p_value = 2.0 * _exact_lower_tail(doubled, int(round(2 * statistic)))
    else:
        mean = n * (n + 1) / 4.0
        _, ties = np.unique(magnitudes, return_counts=True)
        variance = n * (n + 1) * (2 * n + 1) / 24.0 - (ties**3 - ties).sum() / 48.0
        z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(variance)
        p_value = 2.0 * float(stats.norm.sf(z))
    p_value = min(1.0, p_value)
    return WilcoxonResult(statistic, p_value, p_value < level, False, n)


def _paired(first: EvalReport, second: EvalReport):
    other = dict(zip(second.instances, second.makespans))
    pairs = [
        (c, other[name])
        for name, c in zip(first.instances, first.makespans)
        if name in other
    ]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def significance_matrix(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Square table of pairwise p-values, empty diagonal"""
    labels = [report.name for report in reports]
    matrix = pd.DataFrame(np.nan, index=labels, columns=labels)
    for i, j in itertools.combinations(range(len(reports)), 2):
        p_value = wilcoxon(*_paired(reports[i], reports[j])).p_value
        matrix.iloc[i, j] = matrix.iloc[j, i] = p_value
    return matrix


def significance_table(
    reports: Sequence[EvalReport], level: float = 0.05
) -> pd.DataFrame:
    rows = []
    for first, second in itertools.combinations(reports, 2):
        result = wilcoxon(*_paired(first, second), level=level)
        rows.append(
            {
                "alg_a": first.name,
                "alg_b": second.name,
                "p_value": result.p_value,
                "significant": result.significant,
            }
        )
    return pd.DataFrame(rows, columns=SIGNIFICANCE_COLUMNS)


def summary_table(
    reports: Sequence[EvalReport],
    training_minutes: Optional[Mapping[str, float]] = None,
) -> pd.DataFrame:
    training_minutes = training_minutes or {}
    known = [training_minutes[r.label] for r in reports if r.label in training_minutes]
    mean_minutes = float(np.mean(known)) if known else float("nan")
    rows = []
    for report in reports:
        minutes = training_minutes.get(report.label, float("nan"))
        deviation = float("nan")
        if not math.isnan(minutes) and mean_minutes > 0:
            deviation = 100.0 * (minutes - mean_minutes) / mean_minutes
        rows.append(
            {
                "name": report.name,
                "algorithm": report.label,
                "instances": len(report.instances),
                "mean_makespan": report.mean_makespan,
                "mean_gap_pct": report.mean_gap,
                "mean_seconds": report.mean_seconds,
                "training_minutes": minutes,
                "training_deviation_pct": deviation,
            }
        )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def emit_report(
    reports: Sequence[EvalReport],
    out_dir: pathlib.Path,
    validation: Optional[pd.DataFrame] = None,
    training_minutes: Optional[Mapping[str, float]] = None,
    level: float = 0.05,
) -> List[pathlib.Path]:
    """Write per-run tables, the summary, validation curves and significance

    Significance comes both as pairwise rows and as a square p-value matrix.
    """
    out_dir = pathlib.Path(out_dir)
    tables = {f"eval_{report.name}.csv": report.to_frame() for report in reports}
    tables["summary.csv"] = summary_table(reports, training_minutes)
    tables["validation_curves.csv"] = (
        validation
        if validation is not None
        else pd.DataFrame(columns=VALIDATION_COLUMNS)
    )
    tables["significance.csv"] = significance_table(reports, level)
    tables["significance_matrix.csv"] = significance_matrix(reports)
    written = []
    for filename, frame in tables.items():
        path = out_dir / filename
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=filename in INDEXED_TABLES)
        except OSError:
            log.error("Unable to write report", path=str(path))
            raise
        written.append(path)
    log.info("Report written", directory=str(out_dir), files=len(written))
    return written
