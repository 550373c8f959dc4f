"""On-policy learners sharing trajectory collection: REINFORCE, A2C, PPO, V-MPO

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

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

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
    network_dtype,
    segment_log_softmax,
)
from .env import (
    Action,
    FeatureTensors,
    extract_features,
    feasible_actions,
    is_terminal,
    reset,
    step,
)
from .exceptions import ParameterError, TrainingError
from .instances import ProblemInstance
from .value_rl import EpisodeResult, build_network


log = structlog.get_logger()

ALGORITHMS = ("reinforce", "a2c", "ppo", "vmpo")
MULTIPLIER_FLOOR = 1e-8


@dataclass
class PGConfig:
    algorithm: str = "ppo"
    gamma: float = 1.0
    lr: float = 2e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    clip: float = 0.2
    # None picks the per-algorithm default
    epochs: Optional[int] = None
    parallel: Optional[int] = None
    eta_init: float = 1.0
    alpha_init: float = 1.0
    eps_eta: float = 0.01
    eps_alpha_low: float = 0.001
    eps_alpha_high: float = 0.01
    normalize_advantages: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(
                f"unknown policy-gradient algorithm {self.algorithm!r}"
            )
        if self.epochs is None:
            self.epochs = 3 if self.algorithm in ("ppo", "vmpo") else 1
        if self.parallel is None:
            self.parallel = 20 if self.algorithm in ("ppo", "vmpo") else 32
        if min(self.value_coef, self.entropy_coef, self.lr) < 0:
            raise ParameterError("coefficients must be >= 0")
        if not 0 < self.clip < 1:
            raise ParameterError("clip must be in (0, 1)")
        if self.epochs < 1 or self.parallel < 1:
            raise ParameterError("epochs and parallel must be >= 1")
        if not 0 <= self.gamma <= 1:
            raise ParameterError("gamma must be in [0, 1]")
        if self.eta_init <= 0 or self.alpha_init <= 0:
            raise ParameterError("V-MPO multipliers must start > 0")
        if not 0 < self.eps_alpha_low <= self.eps_alpha_high:
            raise ParameterError("invalid eps_alpha range")

    @property
    def uses_critic(self) -> bool:
        return self.algorithm != "reinforce"


@dataclass
class Trajectory:
    """One episode on one instance, as seen at collection time"""

    instance: ProblemInstance
    initial_makespan: float
    features: List[FeatureTensors] = field(default_factory=list)
    candidates: List[List[Action]] = field(default_factory=list)
    choices: List[int] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    policies: List[np.ndarray] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    terminal: bool = False
    makespan: float = float("nan")

    def __len__(self):
        return len(self.rewards)

    @property
    def actions(self) -> List[Action]:
        return [options[i] for options, i in zip(self.candidates, self.choices)]


def collect(
    network: SchedulingNetwork,
    instances: Sequence[ProblemInstance],
    rng: np.random.Generator,
) -> List[Trajectory]:
    """Run every instance to the end in lockstep, sampling from the masked policy"""
    dtype = network_dtype(network)
    states = [reset(instance) for instance in instances]
    trajectories = [Trajectory(i, s.makespan) for i, s in zip(instances, states)]
    while True:
        active = [i for i, state in enumerate(states) if not is_terminal(state)]
        if not active:
            break
        features = [extract_features(states[i]) for i in active]
        candidates = [feasible_actions(states[i]) for i in active]
        batch = collate(features, candidates, dtype=dtype)
        with torch.no_grad():
            emb = network.encode(batch)
            logits = network.score_actions(emb, batch, "policy")
            all_log_probs = segment_log_softmax(
                logits, batch.action_graph, batch.num_graphs
            )
            if network.critic is not None:
                values = network.state_value(emb).cpu().numpy()
            else:
                values = np.zeros(len(active))
        splits = np.cumsum(batch.action_counts)[:-1]
        logit_chunks = np.split(logits.cpu().numpy(), splits)
        log_prob_chunks = np.split(all_log_probs.cpu().numpy(), splits)
        for slot, index in enumerate(active):
            options = candidates[slot]
            choice = masked_select(
                logit_chunks[slot], np.ones(len(options), bool), "sample", rng
            )
            trajectory = trajectories[index]
            trajectory.features.append(features[slot])
            trajectory.candidates.append(options)
            trajectory.choices.append(choice)
            trajectory.log_probs.append(float(log_prob_chunks[slot][choice]))
            trajectory.policies.append(log_prob_chunks[slot])
            trajectory.values.append(float(values[slot]))
            states[index], reward = step(states[index], options[choice])
            trajectory.rewards.append(reward)
    for trajectory, state in zip(trajectories, states):
        trajectory.terminal = True
        trajectory.makespan = state.makespan
    return trajectories


def returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted suffix sums G_t"""
    result = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        result[t] = running
    return result


@dataclass
class PolicyEvaluation:
    """Current-parameter view of every collected step"""

    log_probs: torch.Tensor
    entropy: torch.Tensor
    values: Optional[torch.Tensor]
    all_log_probs: torch.Tensor
    action_graph: torch.Tensor
    num_states: int


def evaluate_trajectories(
    network: SchedulingNetwork, trajectories: Sequence[Trajectory]
) -> PolicyEvaluation:
    features = [f for t in trajectories for f in t.features]
    candidates = [c for t in trajectories for c in t.candidates]
    choices = [c for t in trajectories for c in t.choices]
    batch = collate(features, candidates, dtype=network_dtype(network))
    emb = network.encode(batch)
    logits = network.score_actions(emb, batch, "policy")
    all_log_probs = segment_log_softmax(logits, batch.action_graph, batch.num_graphs)
    offsets = np.concatenate([[0], np.cumsum(batch.action_counts)[:-1]])
    taken = torch.as_tensor(offsets + np.asarray(choices), dtype=torch.long)
    entropy = torch.zeros(
        batch.num_graphs, dtype=logits.dtype, device=logits.device
    ).index_add(0, batch.action_graph, -all_log_probs.exp() * all_log_probs)
    values = network.state_value(emb) if network.critic is not None else None
    return PolicyEvaluation(
        log_probs=all_log_probs[taken],
        entropy=entropy,
        values=values,
        all_log_probs=all_log_probs,
        action_graph=batch.action_graph,
        num_states=batch.num_graphs,
    )


@dataclass
class LossTerms:
    total: torch.Tensor
    policy: torch.Tensor
    value: torch.Tensor
    entropy: torch.Tensor
    temperature: Optional[torch.Tensor] = None
    trust_region: Optional[torch.Tensor] = None


def _zero(like: torch.Tensor) -> torch.Tensor:
    return torch.zeros((), dtype=like.dtype, device=like.device)


def loss_reinforce(
    log_probs: torch.Tensor,
    step_returns: torch.Tensor,
    entropy: torch.Tensor,
    config: PGConfig,
) -> LossTerms:
    policy = -(log_probs * step_returns).mean()
    mean_entropy = entropy.mean()
    return LossTerms(
        total=policy - config.entropy_coef * mean_entropy,
        policy=policy,
        value=_zero(policy),
        entropy=mean_entropy,
    )


def loss_a2c(
    log_probs: torch.Tensor,
    step_returns: torch.Tensor,
    values: torch.Tensor,
    entropy: torch.Tensor,
    config: PGConfig,
) -> LossTerms:
    advantages = step_returns - values.detach()
    policy = -(log_probs * advantages).mean()
    value = F.mse_loss(values, step_returns)
    mean_entropy = entropy.mean()
    return LossTerms(
        total=policy + config.value_coef * value - config.entropy_coef * mean_entropy,
        policy=policy,
        value=value,
        entropy=mean_entropy,
    )


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor, clip: float):
    return torch.min(ratio * advantages, ratio.clamp(1 - clip, 1 + clip) * advantages)


def loss_ppo(
    log_probs: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    step_returns: torch.Tensor,
    values: torch.Tensor,
    entropy: torch.Tensor,
    config: PGConfig,
) -> LossTerms:
    ratio = torch.exp(log_probs - old_log_probs)
    policy = -clipped_surrogate(ratio, advantages, config.clip).mean()
    value = F.mse_loss(values, step_returns)
    mean_entropy = entropy.mean()
    return LossTerms(
        total=policy + config.value_coef * value - config.entropy_coef * mean_entropy,
        policy=policy,
        value=value,
        entropy=mean_entropy,
    )


def top_half(advantages: torch.Tensor) -> torch.Tensor:
    """Mask of the advantages at or above the batch median, ties kept"""
    return advantages >= torch.quantile(advantages, 0.5)


def categorical_kl(
    old_log_probs: torch.Tensor,
    new_log_probs: torch.Tensor,
    action_graph: torch.Tensor,
    num_states: int,
) -> torch.Tensor:
    """KL(old || new) per state over its feasible actions"""
    terms = old_log_probs.exp() * (old_log_probs - new_log_probs)
    return torch.zeros(
        num_states, dtype=terms.dtype, device=terms.device
    ).index_add(0, action_graph, terms)


def vmpo_losses(
    log_probs: torch.Tensor,
    advantages: torch.Tensor,
    step_returns: torch.Tensor,
    values: torch.Tensor,
    kl: torch.Tensor,
    eta: torch.Tensor,
    alpha: torch.Tensor,
    config: PGConfig,
    eps_alpha: float,
) -> Optional[LossTerms]:
    """Weighted policy, temperature, trust-region and critic terms

    Returns None when the batch holds fewer than 2 samples.
    """
    if advantages.numel() < 2:
        return None
    advantages = advantages.detach()
    kept = top_half(advantages)
    scaled = advantages[kept] / eta
    psi = torch.softmax(scaled.detach(), dim=0)
    policy = -(psi * log_probs[kept]).sum()
    temperature = eta * config.eps_eta + eta * (
        torch.logsumexp(scaled, dim=0) - math.log(int(kept.sum()))
    )
    trust_region = (
        alpha.detach() * kl + alpha * (eps_alpha - kl.detach())
    ).mean()
    value = F.mse_loss(values, step_returns)
    return LossTerms(
        total=policy + temperature + trust_region + config.value_coef * value,
        policy=policy,
        value=value,
        entropy=_zero(policy),
        temperature=temperature,
        trust_region=trust_region,
    )


class PolicyGradientAgent:
    """Policy network with a critic head (except REINFORCE) and its optimizer"""

    def __init__(
        self,
        config: PGConfig,
        encoder: Optional[EncoderConfig] = None,
        seed=0,
        dtype: torch.dtype = torch.float32,
    ):
        sequence = (
            seed
            if isinstance(seed, np.random.SeedSequence)
            else np.random.SeedSequence(seed)
        )
        network_seq, sampling_seq = sequence.spawn(2)
        self.config = config
        self.algorithm = config.algorithm
        self.dtype = dtype
        encoder = replace(
            encoder or EncoderConfig(),
            dueling=False,
            noisy=False,
            atoms=1,
            critic=config.uses_critic,
        )
        self.network = build_network(encoder, network_seq, dtype)
        self.rng = np.random.Generator(np.random.PCG64(sampling_seq))
        params = [{"params": list(self.network.parameters())}]
        if config.algorithm == "vmpo":
            self.eta = torch.tensor(config.eta_init, dtype=dtype, requires_grad=True)
            self.alpha = torch.tensor(
                config.alpha_init, dtype=dtype, requires_grad=True
            )
            params.append({"params": [self.eta, self.alpha]})
        else:
            self.eta = self.alpha = None
        self.optimizer = torch.optim.Adam(params, lr=config.lr)
        self.updates = 0

    @property
    def scoring_mode(self) -> str:
        return "policy"

    def parameters(self) -> List[torch.Tensor]:
        params = list(self.network.parameters())
        if self.eta is not None:
            params += [self.eta, self.alpha]
        return params

    def losses(
        self, trajectories: Sequence[Trajectory], advantages: torch.Tensor
    ) -> Optional[LossTerms]:
        config = self.config
        step_returns = torch.as_tensor(
            np.concatenate([returns(t.rewards, config.gamma) for t in trajectories]),
            dtype=self.dtype,
        )
        current = evaluate_trajectories(self.network, trajectories)
        if config.algorithm == "reinforce":
            return loss_reinforce(
                current.log_probs, step_returns, current.entropy, config
            )
        if config.algorithm == "a2c":
            return loss_a2c(
                current.log_probs, step_returns, current.values, current.entropy, config
            )
        if config.algorithm == "ppo":
            old_log_probs = torch.as_tensor(
                [p for t in trajectories for p in t.log_probs], dtype=self.dtype
            )
            return loss_ppo(
                current.log_probs,
                old_log_probs,
                advantages,
                step_returns,
                current.values,
                current.entropy,
                config,
            )
        old_policies = torch.as_tensor(
            np.concatenate([p for t in trajectories for p in t.policies]),
            dtype=self.dtype,
        )
        kl = categorical_kl(
            old_policies,
            current.all_log_probs,
            current.action_graph,
            current.num_states,
        )
        eps_alpha = math.exp(
            self.rng.uniform(
                math.log(config.eps_alpha_low), math.log(config.eps_alpha_high)
            )
        )
        return vmpo_losses(
            current.log_probs,
            advantages,
            step_returns,
            current.values,
            kl,
            self.eta,
            self.alpha,
            config,
            eps_alpha,
        )

    def collection_advantages(self, trajectories: Sequence[Trajectory]) -> torch.Tensor:
        """G_t minus the critic value recorded at collection"""
        step_returns = np.concatenate(
            [returns(t.rewards, self.config.gamma) for t in trajectories]
        )
        values = np.concatenate([t.values for t in trajectories])
        advantages = step_returns - values
        if self.config.normalize_advantages and len(advantages) > 1:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
        return torch.as_tensor(advantages, dtype=self.dtype)

    def update(self, trajectories: Sequence[Trajectory]) -> Optional[float]:
        """Gradient epochs on one collected batch; mean total loss or None if skipped"""
        advantages = self.collection_advantages(trajectories)
        totals = []
        for epoch in range(self.config.epochs):
            terms = self.losses(trajectories, advantages)
            if terms is None:
                log.warning("Update skipped, not enough samples", epoch=epoch)
                return None
            params = self.parameters()
            try:
                grads = gradients(terms.total, params)
            except TrainingError:
                log.error(
                    "Non-finite policy loss",
                    algorithm=self.algorithm,
                    update=self.updates,
                    epoch=epoch,
                )
                raise
            for param, grad in zip(params, grads):
                param.grad = grad
            self.optimizer.step()
            if self.eta is not None:
                with torch.no_grad():
                    self.eta.clamp_(min=MULTIPLIER_FLOOR)
                    self.alpha.clamp_(min=MULTIPLIER_FLOOR)
            totals.append(float(terms.total.detach()))
        self.updates += 1
        return float(np.mean(totals))

    def train_episode(
        self, instances: Sequence[ProblemInstance], episode: int, total_episodes: int
    ) -> EpisodeResult:
        trajectories = collect(self.network, instances, self.rng)
        loss = self.update(trajectories)
        return EpisodeResult(
            makespan=float(np.mean([t.makespan for t in trajectories])),
            loss=float("nan") if loss is None else loss,
            epsilon=0.0,
            steps=sum(len(t) for t in trajectories),
        )
