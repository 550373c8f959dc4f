"""DQN and the Rainbow extensions as independent toggles

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
import collections
import copy
import math

from dataclasses import dataclass, replace
from typing import Any, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import structlog
import torch
import torch.nn.functional as F

from .encoder import (
    EncoderConfig,
    SchedulingNetwork,
    collate,
    gradients,
    masked_select,
    score_states,
)
from .env import (
    Action,
    ScheduleState,
    extract_features,
    feasible_actions,
    is_terminal,
    reset,
    step,
)
from .exceptions import ParameterError, TrainingError
from .instances import ProblemInstance


log = structlog.get_logger()

TOGGLES = ("ddqn", "per", "dueling", "noisy", "distributional", "multistep")


@dataclass
class RainbowConfig:
    ddqn: bool = False
    per: bool = False
    dueling: bool = False
    noisy: bool = False
    distributional: bool = False
    multistep: bool = False
    n_steps: int = 4
    atoms: int = 51
    v_min: float = -50.0
    v_max: float = 0.0
    gamma: float = 0.99
    buffer_capacity: int = 20000
    batch_size: int = 32
    target_period: int = 10
    lr: float = 2e-4
    per_alpha: float = 0.4
    per_beta_start: float = 0.4
    per_eps: float = 1e-5
    eps_decay: float = 600.0
    eps_min: float = 0.1
    updates_per_step: int = 1

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ParameterError("v_min must be lower than v_max")
        if self.atoms < 2:
            raise ParameterError("atoms must be >= 2")
        if self.n_steps < 1:
            raise ParameterError("n_steps must be >= 1")
        if self.buffer_capacity < 1 or self.batch_size < 1:
            raise ParameterError("buffer_capacity and batch_size must be >= 1")
        if self.target_period < 1:
            raise ParameterError("target_period must be >= 1")
        if not 0 <= self.gamma <= 1:
            raise ParameterError("gamma must be in [0, 1]")
        if self.updates_per_step < 0:
            raise ParameterError("updates_per_step must be >= 0")

    @classmethod
    def for_problem(cls, problem: str, **overrides) -> "RainbowConfig":
        """Problem-specific horizon and atom range"""
        if problem == "jssp":
            defaults = {"n_steps": 2, "v_min": -600.0, "v_max": -50.0}
        elif problem == "fjsp":
            defaults = {"n_steps": 4, "v_min": -50.0, "v_max": 0.0}
        else:
            raise ParameterError(f"unknown problem {problem!r}")
        defaults.update(overrides)
        return cls(**defaults)

    @property
    def horizon(self) -> int:
        return self.n_steps if self.multistep else 1

    @property
    def label(self) -> str:
        enabled = [name for name in TOGGLES if getattr(self, name)]
        if len(enabled) == len(TOGGLES):
            return "rainbow"
        return "+".join(["dqn"] + enabled)

    def with_toggles(self, **toggles) -> "RainbowConfig":
        unknown = set(toggles) - set(TOGGLES)
        if unknown:
            raise ParameterError(f"unknown toggles {sorted(unknown)}")
        return replace(self, **toggles)

    def encoder_config(self, base: EncoderConfig) -> EncoderConfig:
        return replace(
            base,
            dueling=self.dueling,
            noisy=self.noisy,
            atoms=self.atoms if self.distributional else 1,
            v_min=self.v_min,
            v_max=self.v_max,
            critic=False,
        )


def epsilon(episode: int, config: Optional[RainbowConfig] = None) -> float:
    """Exploration rate, zero when exploration comes from noisy layers"""
    if episode < 0:
        raise ParameterError("episode must be >= 0")
    config = config or RainbowConfig()
    if config.noisy:
        return 0.0
    return max(math.exp(-episode / config.eps_decay), config.eps_min)


def per_beta(episode: int, total: int, start: float = 0.4) -> float:
    """Importance sampling exponent, linear from start at episode 1 to 1 at total"""
    if total <= 1:
        return 1.0
    fraction = min(max((episode - 1) / (total - 1), 0.0), 1.0)
    return start + (1.0 - start) * fraction


class Step(NamedTuple):
    state: ScheduleState
    action: Action
    reward: float
    next_state: ScheduleState
    done: bool


class Transition(NamedTuple):
    state: ScheduleState
    action: Action
    reward: float
    next_state: ScheduleState
    done: bool
    discount: float


def nstep_aggregate(window: Sequence[Step], n: int, gamma: float) -> Transition:
    """Fold up to n steps from window[0], stopping at the end of the episode"""
    if not window:
        raise ParameterError("empty window")
    if n < 1:
        raise ParameterError("n must be >= 1")
    reward = 0.0
    discount = 1.0
    for last in list(window)[:n]:
        reward += discount * last.reward
        discount *= gamma
        if last.done:
            break
    first = window[0]
    return Transition(
        first.state, first.action, reward, last.next_state, last.done, discount
    )


class NStepAccumulator:
    """Turns a stream of steps into n-step transitions"""

    def __init__(self, n: int, gamma: float):
        self.n = n
        self.gamma = gamma
        self.window = collections.deque()

    def push(self, item: Step) -> List[Transition]:
        self.window.append(item)
        ready = []
        if item.done:
            while self.window:
                ready.append(nstep_aggregate(self.window, self.n, self.gamma))
                self.window.popleft()
        elif len(self.window) == self.n:
            ready.append(nstep_aggregate(self.window, self.n, self.gamma))
            self.window.popleft()
        return ready


class ReplayBuffer:
    """Ring buffer sampled uniformly with replacement"""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ParameterError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.storage: List[Any] = []
        self.position = 0

    def __len__(self):
        return len(self.storage)

    def add(self, transition) -> int:
        index = self.position
        if len(self.storage) < self.capacity:
            self.storage.append(transition)
        else:
            self.storage[index] = transition
        self.position = (self.position + 1) % self.capacity
        return index

    def probabilities(self) -> np.ndarray:
        return np.full(len(self), 1.0 / len(self))

    def sample(self, batch_size: int, beta: Optional[float] = None):
        """Returns (transitions, indices, importance weights)"""
        if not self.storage:
            raise ParameterError("sampling from an empty buffer")
        indices = self.rng.integers(len(self), size=batch_size)
        return (
            [self.storage[i] for i in indices],
            indices,
            np.ones(batch_size),
        )

    def update_priorities(self, indices, td_errors):
        pass


class SumTree:
    """Binary tree in an array, every parent holds the sum of its children"""

    def __init__(self, size: int):
        self.size = size
        self.nodes = np.zeros(2 * size - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def update(self, data_index: int, value: float):
        index = data_index + self.size - 1
        change = value - self.nodes[index]
        self.nodes[index] = value
        parent = (index - 1) // 2
        while parent >= 0:
            self.nodes[parent] += change
            parent = (parent - 1) // 2

    def get(self, cumsum: float) -> Tuple[int, float]:
        index = 0
        while 2 * index + 1 < len(self.nodes):
            left, right = 2 * index + 1, 2 * index + 2
            # empty right subtrees only exist past the filled leaves
            if cumsum <= self.nodes[left] or self.nodes[right] <= 0:
                index = left
            else:
                index = right
                cumsum -= self.nodes[left]
        return index - self.size + 1, float(self.nodes[index])

    def leaves(self, count: int) -> np.ndarray:
        return self.nodes[self.size - 1 : self.size - 1 + count]


class PrioritizedReplayBuffer(ReplayBuffer):
    """Proportional prioritisation over a sum tree"""

    def __init__(
        self,
        capacity: int,
        rng: np.random.Generator,
        alpha: float = 0.4,
        eps: float = 1e-5,
    ):
        super().__init__(capacity, rng)
        if alpha < 0 or eps < 0:
            raise ParameterError("alpha and eps must be >= 0")
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.max_priority = 1.0

    def add(self, transition) -> int:
        index = super().add(transition)
        self.tree.update(index, self.max_priority**self.alpha)
        return index

    def probabilities(self) -> np.ndarray:
        return self.tree.leaves(len(self)) / self.tree.total

    def sample(self, batch_size: int, beta: Optional[float] = None):
        if not self.storage:
            raise ParameterError("sampling from an empty buffer")
        beta = 0.4 if beta is None else beta
        segment = self.tree.total / batch_size
        indices = np.empty(batch_size, dtype=np.int64)
        priorities = np.empty(batch_size)
        for i in range(batch_size):
            cumsum = self.rng.uniform(segment * i, segment * (i + 1))
            indices[i], priorities[i] = self.tree.get(cumsum)
        probabilities = priorities / self.tree.total
        weights = (len(self) * probabilities) ** -beta
        weights /= weights.max()
        return [self.storage[i] for i in indices], indices, weights

    def update_priorities(self, indices, td_errors):
        priorities = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps
        for index, priority in zip(indices, priorities):
            self.tree.update(int(index), priority**self.alpha)
        self.max_priority = max(self.max_priority, float(priorities.max()))


def td_target(rewards, discounts, dones, next_values):
    """r + gamma_eff * max Q', the bootstrap term vanishes on done"""
    return rewards + discounts * (1.0 - dones) * next_values


def categorical_project(rewards, discounts, dones, next_probs, support):
    """Project the shifted next-state distributions back on the atom grid"""
    v_min, v_max = float(support[0]), float(support[-1])
    atoms = support.shape[0]
    delta = (v_max - v_min) / (atoms - 1)
    shifted = (
        rewards.unsqueeze(-1)
        + (discounts * (1.0 - dones)).unsqueeze(-1) * support.unsqueeze(0)
    ).clamp(v_min, v_max)
    position = (shifted - v_min) / delta
    lower = position.floor().long().clamp(0, atoms - 1)
    upper = position.ceil().long().clamp(0, atoms - 1)
    lower_mass = next_probs * (upper.to(next_probs.dtype) - position)
    upper_mass = next_probs * (position - lower.to(next_probs.dtype))
    # exact hits have lower == upper and no split
    lower_mass = torch.where(lower == upper, next_probs, lower_mass)
    projected = torch.zeros_like(next_probs)
    projected.scatter_add_(1, lower, lower_mass)
    projected.scatter_add_(1, upper, upper_mass)
    return projected


def greedy_indices(scores: torch.Tensor, counts: Sequence[int]) -> torch.Tensor:
    """Global index of the best action of every state, lowest index on ties"""
    chosen = []
    offset = 0
    for chunk in torch.split(scores, list(counts)):
        chosen.append(offset + int(torch.argmax(chunk)))
        offset += chunk.shape[0]
    return torch.as_tensor(chosen, dtype=torch.long)


def transition_batch(transitions: Sequence[Transition], dtype: torch.dtype):
    """Batch of the starting states, index of the taken actions and the scalars"""
    candidates = [feasible_actions(t.state) for t in transitions]
    batch = collate(
        [extract_features(t.state) for t in transitions], candidates, dtype=dtype
    )
    taken = []
    offset = 0
    for transition, actions in zip(transitions, candidates):
        taken.append(offset + actions.index(transition.action))
        offset += len(actions)

    def scalars(name):
        return torch.as_tensor(
            [float(getattr(t, name)) for t in transitions], dtype=dtype
        )

    return (
        batch,
        torch.as_tensor(taken, dtype=torch.long),
        scalars("reward"),
        scalars("discount"),
        scalars("done"),
    )


def next_state_batch(transitions: Sequence[Transition], dtype: torch.dtype):
    """Positions of the non-terminal transitions and the batch of their next states"""
    live = [i for i, t in enumerate(transitions) if not t.done]
    if not live:
        return live, None
    states = [transitions[i].next_state for i in live]
    batch = collate(
        [extract_features(s) for s in states],
        [feasible_actions(s) for s in states],
        dtype=dtype,
    )
    return live, batch


def plain_dqn_loss(
    online: SchedulingNetwork,
    target: SchedulingNetwork,
    transitions: Sequence[Transition],
    dtype: torch.dtype = torch.float32,
):
    """Reference DQN loss: max over the target network, unweighted MSE"""
    batch, taken, rewards, discounts, dones = transition_batch(transitions, dtype)
    live, next_batch = next_state_batch(transitions, dtype)
    q = online(batch, "q")[taken]
    with torch.no_grad():
        next_values = torch.zeros_like(rewards)
        if live:
            target_q = target(next_batch, "q")
            next_values[live] = torch.stack(
                [
                    chunk.max()
                    for chunk in torch.split(target_q, next_batch.action_counts)
                ]
            )
        targets = rewards + discounts * (1.0 - dones) * next_values
    return F.mse_loss(q, targets)


def sync_target(online: SchedulingNetwork, target: SchedulingNetwork):
    """Hard copy of the online parameters into the target network"""
    target.load_state_dict(online.state_dict())
    return target


@dataclass
class EpisodeResult:
    makespan: float
    loss: float
    epsilon: float
    steps: int


def _torch_seed(sequence: np.random.SeedSequence) -> int:
    return int(sequence.generate_state(1, np.uint32)[0])


def build_network(
    config: EncoderConfig, sequence: np.random.SeedSequence, dtype: torch.dtype
) -> SchedulingNetwork:
    """Network initialised from its own seed, leaving the global torch RNG alone"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(_torch_seed(sequence))
        network = SchedulingNetwork(config)
    return network.to(dtype)


class DQNAgent:
    """Online and target networks, replay, n-step folding and optimizer state"""

    algorithm = "dqn"

    def __init__(
        self,
        config: RainbowConfig,
        encoder: Optional[EncoderConfig] = None,
        seed=0,
        dtype: torch.dtype = torch.float32,
        plain_loss: bool = False,
    ):
        if plain_loss and any(getattr(config, name) for name in TOGGLES):
            raise ParameterError("the plain DQN loss needs every extension off")
        sequence = (
            seed
            if isinstance(seed, np.random.SeedSequence)
            else np.random.SeedSequence(seed)
        )
        network_seq, noise_seq, replay_seq = sequence.spawn(3)
        self.config = config
        self.dtype = dtype
        self.plain_loss = plain_loss
        self.online = build_network(
            config.encoder_config(encoder or EncoderConfig()), network_seq, dtype
        )
        self.target = copy.deepcopy(self.online)
        self.target.requires_grad_(False)
        self.optimizer = torch.optim.Adam(self.online.parameters(), lr=config.lr)
        self.noise_generator = torch.Generator().manual_seed(_torch_seed(noise_seq))
        self.rng = np.random.Generator(np.random.PCG64(replay_seq))
        if config.per:
            self.buffer = PrioritizedReplayBuffer(
                config.buffer_capacity,
                self.rng,
                alpha=config.per_alpha,
                eps=config.per_eps,
            )
        else:
            self.buffer = ReplayBuffer(config.buffer_capacity, self.rng)
        self.accumulator = NStepAccumulator(config.horizon, config.gamma)
        self.updates = 0

    @property
    def network(self) -> SchedulingNetwork:
        return self.online

    @property
    def scoring_mode(self) -> str:
        return "q"

    def act(self, state: ScheduleState, episode: int) -> Action:
        """Epsilon-greedy, or greedy over freshly sampled noise"""
        actions = feasible_actions(state)
        rate = epsilon(max(episode - 1, 0), self.config)
        if rate > 0 and self.rng.random() < rate:
            return actions[int(self.rng.integers(len(actions)))]
        if self.config.noisy:
            self.online.reset_noise(self.noise_generator)
        candidates, scores = score_states(self.online, [state], "q")
        return candidates[0][masked_select(scores[0], np.ones(len(scores[0]), bool))]

    def observe(self, item: Step):
        for transition in self.accumulator.push(item):
            self.buffer.add(transition)

    def compute_loss(self, transitions: Sequence[Transition], weights=None):
        """Configured loss and the per-sample TD errors used as priorities"""
        config = self.config
        batch, taken, rewards, discounts, dones = transition_batch(
            transitions, self.dtype
        )
        live, next_batch = next_state_batch(transitions, self.dtype)
        if config.distributional:
            logits = self.online(batch, "distributional")[taken]
            support = self.online.support
            with torch.no_grad():
                next_probs = torch.full(
                    (len(transitions), config.atoms),
                    1.0 / config.atoms,
                    dtype=self.dtype,
                )
                if live:
                    target_probs = torch.softmax(
                        self.target(next_batch, "distributional"), dim=-1
                    )
                    if config.ddqn:
                        selector = self.online(next_batch, "q")
                    else:
                        selector = (target_probs * support).sum(-1)
                    chosen = greedy_indices(selector, next_batch.action_counts)
                    next_probs[live] = target_probs[chosen]
                projected = categorical_project(
                    rewards, discounts, dones, next_probs, support
                )
            losses = -(projected * F.log_softmax(logits, dim=-1)).sum(-1)
            td_errors = losses.detach()
        else:
            q = self.online(batch, "q")[taken]
            with torch.no_grad():
                next_values = torch.zeros_like(rewards)
                if live:
                    target_q = self.target(next_batch, "q")
                    selector = self.online(next_batch, "q") if config.ddqn else target_q
                    next_values[live] = target_q[
                        greedy_indices(selector, next_batch.action_counts)
                    ]
                targets = td_target(rewards, discounts, dones, next_values)
            td_errors = (q - targets).detach().abs()
            if weights is None:
                return F.mse_loss(q, targets), td_errors.cpu().numpy()
            losses = (q - targets) ** 2
        if weights is None:
            loss = losses.mean()
        else:
            loss = (torch.as_tensor(weights, dtype=self.dtype) * losses).mean()
        return loss, td_errors.cpu().numpy()

    def train_step(self, beta: Optional[float] = None) -> Optional[float]:
        """One gradient step, skipped while the buffer holds less than a batch"""
        config = self.config
        if len(self.buffer) < config.batch_size:
            return None
        transitions, indices, weights = self.buffer.sample(config.batch_size, beta)
        if config.noisy:
            self.online.reset_noise(self.noise_generator)
            self.target.reset_noise(self.noise_generator)
        if self.plain_loss:
            loss = plain_dqn_loss(self.online, self.target, transitions, self.dtype)
            td_errors = None
        else:
            loss, td_errors = self.compute_loss(
                transitions, weights if config.per else None
            )
        params = list(self.online.parameters())
        try:
            grads = gradients(loss, params)
        except TrainingError:
            log.error("Non-finite DQN loss", update=self.updates, label=config.label)
            raise
        for param, grad in zip(params, grads):
            param.grad = grad
        self.optimizer.step()
        if config.per:
            self.buffer.update_priorities(indices, td_errors)
        self.updates += 1
        return float(loss.detach())

    def maybe_sync(self, episode: int) -> bool:
        if episode % self.config.target_period:
            return False
        sync_target(self.online, self.target)
        log.debug("Target network synced", episode=episode)
        return True

    def train_episode(
        self, instances: Sequence[ProblemInstance], episode: int, total_episodes: int
    ) -> EpisodeResult:
        """Play one episode per instance, training after every environment step"""
        beta = per_beta(episode, total_episodes, self.config.per_beta_start)
        losses = []
        makespans = []
        steps = 0
        for instance in instances:
            state = reset(instance)
            while not is_terminal(state):
                action = self.act(state, episode)
                next_state, reward = step(state, action)
                self.observe(
                    Step(state, action, reward, next_state, is_terminal(next_state))
                )
                for _ in range(self.config.updates_per_step):
                    loss = self.train_step(beta)
                    if loss is not None:
                        losses.append(loss)
                state = next_state
                steps += 1
            makespans.append(state.makespan)
        self.maybe_sync(episode)
        return EpisodeResult(
            makespan=float(np.mean(makespans)),
            loss=float(np.mean(losses)) if losses else float("nan"),
            epsilon=epsilon(max(episode - 1, 0), self.config),
            steps=steps,
        )
