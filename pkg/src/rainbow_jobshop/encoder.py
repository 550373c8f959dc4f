"""Heterogeneous graph encoder and action scoring heads

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

Several states are evaluated at once as the disjoint union of their graphs
(see collate); every per-graph reduction is a scatter over a graph index.
"""
import math
import pathlib

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import structlog
import torch
import torch.nn.functional as F

from torch import nn

from .env import (
    Action,
    FeatureTensors,
    ScheduleState,
    extract_features,
    feasible_actions,
)
from .exceptions import ContractViolation, ParameterError, TrainingError


log = structlog.get_logger()

CHECKPOINT_FORMAT = 1
LEAKY_SLOPE = 0.2


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 1
    dueling: bool = False
    noisy: bool = False
    # atoms == 1 is a scalar head, more atoms a categorical return distribution
    atoms: int = 1
    v_min: float = -50.0
    v_max: float = 0.0
    critic: bool = False

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ParameterError("encoder sizes must be >= 1")
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads"
            )
        if self.atoms < 1:
            raise ParameterError("atoms must be >= 1")
        if self.atoms > 1 and not self.v_min < self.v_max:
            raise ParameterError("v_min must be lower than v_max")


@dataclass
class GraphBatch:
    """Disjoint union of several states plus the actions to score"""

    op_x: torch.Tensor
    mach_x: torch.Tensor
    edge_op: torch.Tensor
    edge_mach: torch.Tensor
    edge_x: torch.Tensor
    pred: torch.Tensor
    succ: torch.Tensor
    op_graph: torch.Tensor
    mach_graph: torch.Tensor
    action_op: torch.Tensor
    action_mach: torch.Tensor
    action_graph: torch.Tensor
    action_counts: List[int] = field(default_factory=list)

    @property
    def num_graphs(self) -> int:
        return len(self.action_counts)


@dataclass
class EmbeddingSet:
    op: torch.Tensor
    mach: torch.Tensor
    graph: torch.Tensor


def _zscore(values: np.ndarray) -> np.ndarray:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (values - mean) / std


def normalize_features(
    raw: FeatureTensors, stats: Optional[Dict[str, Any]] = None
) -> FeatureTensors:
    """Z-score every feature column, by default over the nodes of this state

    stats may give {"op": (mean, std), "machine": ..., "edge": ...}; a zero
    standard deviation is replaced by 1.
    """
    if stats is None:
        return replace(
            raw,
            op_features=_zscore(raw.op_features),
            machine_features=_zscore(raw.machine_features),
            edge_features=_zscore(raw.edge_features),
        )

    def apply(values, key):
        mean, std = (np.asarray(v, dtype=np.float64) for v in stats[key])
        return (values - mean) / np.where(std > 0, std, 1.0)

    return replace(
        raw,
        op_features=apply(raw.op_features, "op"),
        machine_features=apply(raw.machine_features, "machine"),
        edge_features=apply(raw.edge_features, "edge"),
    )


def collate(
    features: Sequence[FeatureTensors],
    actions: Sequence[Sequence[Action]],
    dtype: torch.dtype = torch.float32,
    normalize: bool = True,
) -> GraphBatch:
    """Build one batch from several states and their candidate actions"""
    op_x, mach_x, edge_op, edge_mach, edge_x = [], [], [], [], []
    pred, succ, op_graph, mach_graph = [], [], [], []
    action_op, action_mach, action_graph, counts = [], [], [], []
    op_offset = mach_offset = 0
    for graph, (raw, graph_actions) in enumerate(zip(features, actions)):
        tensors = normalize_features(raw) if normalize else raw
        n_ops, n_machs = tensors.num_operations, tensors.num_machines
        op_x.append(tensors.op_features)
        mach_x.append(tensors.machine_features)
        edge_op.append(tensors.edge_index[0] + op_offset)
        edge_mach.append(tensors.edge_index[1] + mach_offset)
        edge_x.append(tensors.edge_features)
        pred.append(np.where(tensors.pred >= 0, tensors.pred + op_offset, -1))
        succ.append(np.where(tensors.succ >= 0, tensors.succ + op_offset, -1))
        op_graph.append(np.full(n_ops, graph))
        mach_graph.append(np.full(n_machs, graph))
        for action in graph_actions:
            action_op.append(tensors.job_start[action.job] + action.op + op_offset)
            action_mach.append(action.machine + mach_offset)
            action_graph.append(graph)
        counts.append(len(graph_actions))
        op_offset += n_ops
        mach_offset += n_machs

    def floats(parts):
        return torch.as_tensor(np.concatenate(parts), dtype=dtype)

    def longs(parts):
        return torch.as_tensor(np.concatenate(parts), dtype=torch.long)

    return GraphBatch(
        op_x=floats(op_x),
        mach_x=floats(mach_x),
        edge_op=longs(edge_op),
        edge_mach=longs(edge_mach),
        edge_x=floats(edge_x).unsqueeze(-1),
        pred=longs(pred),
        succ=longs(succ),
        op_graph=longs(op_graph),
        mach_graph=longs(mach_graph),
        action_op=torch.as_tensor(action_op, dtype=torch.long),
        action_mach=torch.as_tensor(action_mach, dtype=torch.long),
        action_graph=torch.as_tensor(action_graph, dtype=torch.long),
        action_counts=counts,
    )


def segment_softmax(scores: torch.Tensor, index: torch.Tensor, size: int):
    """Softmax of scores among entries sharing the same index (first dim)"""
    expanded = index.view(-1, *([1] * (scores.dim() - 1))).expand_as(scores)
    maximum = torch.full(
        (size,) + tuple(scores.shape[1:]),
        -math.inf,
        dtype=scores.dtype,
        device=scores.device,
    ).scatter_reduce(0, expanded, scores.detach(), reduce="amax", include_self=True)
    exp = torch.exp(scores - maximum[index])
    total = torch.zeros_like(maximum).index_add(0, index, exp)
    return exp / total[index]


def segment_log_softmax(scores: torch.Tensor, index: torch.Tensor, size: int):
    """Log-softmax over the entries of each segment (1-d scores)"""
    maximum = torch.full(
        (size,), -math.inf, dtype=scores.dtype, device=scores.device
    ).scatter_reduce(0, index, scores.detach(), reduce="amax", include_self=True)
    shifted = scores - maximum[index]
    total = torch.zeros(size, dtype=scores.dtype, device=scores.device).index_add(
        0, index, torch.exp(shifted)
    )
    return shifted - torch.log(total)[index]


def segment_mean(values: torch.Tensor, index: torch.Tensor, size: int):
    total = torch.zeros(
        (size,) + tuple(values.shape[1:]), dtype=values.dtype, device=values.device
    ).index_add(0, index, values)
    count = torch.zeros(size, dtype=values.dtype, device=values.device).index_add(
        0, index, torch.ones_like(index, dtype=values.dtype)
    )
    return total / count.clamp(min=1).view(-1, *([1] * (values.dim() - 1)))


def _mlp(in_dim: int, hidden_dim: int, out_dim: int) -> nn.Sequential:
    """Two hidden layers with ELU"""
    return nn.Sequential(
        nn.Linear(in_dim, hidden_dim),
        nn.ELU(),
        nn.Linear(hidden_dim, hidden_dim),
        nn.ELU(),
        nn.Linear(hidden_dim, out_dim),
    )


class NoisyLinear(nn.Module):
    """Linear layer with learnable factorised Gaussian weight noise"""

    def __init__(self, in_features: int, out_features: int, sigma0: float = 0.5):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.noise_mode = "sampled"
        bound = 1 / math.sqrt(in_features)
        self.weight_mu = nn.Parameter(
            torch.empty(out_features, in_features).uniform_(-bound, bound)
        )
        self.weight_sigma = nn.Parameter(
            torch.full((out_features, in_features), sigma0 * bound)
        )
        self.bias_mu = nn.Parameter(torch.empty(out_features).uniform_(-bound, bound))
        self.bias_sigma = nn.Parameter(torch.full((out_features,), sigma0 * bound))
        self.register_buffer("eps_in", torch.zeros(in_features))
        self.register_buffer("eps_out", torch.zeros(out_features))
        self.reset_noise()

    @staticmethod
    def _scaled(size, generator, like):
        noise = torch.randn(size, generator=generator, dtype=like.dtype)
        return noise.sign() * noise.abs().sqrt()

    def reset_noise(self, generator: Optional[torch.Generator] = None):
        with torch.no_grad():
            self.eps_in.copy_(self._scaled(self.in_features, generator, self.eps_in))
            self.eps_out.copy_(self._scaled(self.out_features, generator, self.eps_out))

    def forward(self, x):
        if self.noise_mode == "zero":
            return F.linear(x, self.weight_mu, self.bias_mu)
        weight = self.weight_mu + self.weight_sigma * torch.outer(
            self.eps_out, self.eps_in
        )
        bias = self.bias_mu + self.bias_sigma * self.eps_out
        return F.linear(x, weight, bias)


def noisy_linear(x, params: NoisyLinear, noise_mode: str = "sampled"):
    """Evaluate a noisy layer in the given noise mode"""
    previous = params.noise_mode
    params.noise_mode = noise_mode
    try:
        return params(x)
    finally:
        params.noise_mode = previous


def _linear(in_dim: int, out_dim: int, noisy: bool) -> nn.Module:
    return NoisyLinear(in_dim, out_dim) if noisy else nn.Linear(in_dim, out_dim)


class MachineAttention(nn.Module):
    """Machine embeddings from attention over neighbouring operations and self"""

    def __init__(self, op_in: int, mach_in: int, embed_dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.w_op = nn.Linear(op_in, embed_dim, bias=False)
        self.w_mach = nn.Linear(mach_in, embed_dim, bias=False)
        self.w_edge = nn.Linear(1, embed_dim, bias=False)
        bound = 1 / math.sqrt(self.head_dim)
        self.a_op = nn.Parameter(
            torch.empty(num_heads, self.head_dim).uniform_(-bound, bound)
        )
        self.a_mach = nn.Parameter(
            torch.empty(num_heads, self.head_dim).uniform_(-bound, bound)
        )
        self.a_edge = nn.Parameter(
            torch.empty(num_heads, self.head_dim).uniform_(-bound, bound)
        )

    def forward(self, op_h, mach_h, edge_op, edge_mach, edge_x):
        shape = (-1, self.num_heads, self.head_dim)
        num_machines = mach_h.shape[0]
        proj_op = self.w_op(op_h)[edge_op].view(shape)
        proj_mach = self.w_mach(mach_h).view(shape)
        proj_edge = self.w_edge(edge_x).view(shape)

        mach_score = (proj_mach * self.a_mach).sum(-1)
        edge_scores = F.leaky_relu(
            (proj_op * self.a_op).sum(-1)
            + mach_score[edge_mach]
            + (proj_edge * self.a_edge).sum(-1),
            LEAKY_SLOPE,
        )
        self_scores = F.leaky_relu(mach_score + mach_score, LEAKY_SLOPE)

        index = torch.cat(
            [edge_mach, torch.arange(num_machines, device=edge_mach.device)]
        )
        alpha = segment_softmax(
            torch.cat([edge_scores, self_scores]), index, num_machines
        )
        messages = torch.cat([proj_op + proj_edge, proj_mach]) * alpha.unsqueeze(-1)
        combined = torch.zeros(
            (num_machines, self.num_heads, self.head_dim),
            dtype=messages.dtype,
            device=messages.device,
        ).index_add(0, index, messages)
        return torch.sigmoid(combined.reshape(num_machines, -1))


class OperationUpdate(nn.Module):
    """Operation embeddings from predecessor, successor, machines and self"""

    def __init__(self, op_in: int, embed_dim: int, hidden_dim: int):
        super().__init__()
        self.start = nn.Parameter(torch.zeros(op_in))
        self.end = nn.Parameter(torch.zeros(op_in))
        self.mlp_pred = _mlp(op_in, hidden_dim, embed_dim)
        self.mlp_succ = _mlp(op_in, hidden_dim, embed_dim)
        self.mlp_mach = _mlp(embed_dim, hidden_dim, embed_dim)
        self.mlp_self = _mlp(op_in, hidden_dim, embed_dim)
        self.project = _mlp(4 * embed_dim, hidden_dim, embed_dim)

    @staticmethod
    def _neighbour(op_h, index, dummy):
        gathered = op_h[index.clamp(min=0)]
        return torch.where(
            (index >= 0).unsqueeze(-1), gathered, dummy.expand_as(gathered)
        )

    def forward(self, op_h, mach_emb, edge_op, edge_mach, pred, succ):
        mach_sum = torch.zeros(
            (op_h.shape[0], mach_emb.shape[1]),
            dtype=mach_emb.dtype,
            device=mach_emb.device,
        ).index_add(0, edge_op, mach_emb[edge_mach])
        parts = torch.cat(
            [
                self.mlp_pred(self._neighbour(op_h, pred, self.start)),
                self.mlp_succ(self._neighbour(op_h, succ, self.end)),
                self.mlp_mach(mach_sum),
                self.mlp_self(op_h),
            ],
            dim=-1,
        )
        return self.project(F.elu(parts))


class ScoringHead(nn.Module):
    """Two linear layers with tanh in between"""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, noisy: bool):
        super().__init__()
        self.hidden = _linear(in_dim, hidden_dim, noisy)
        self.out = _linear(hidden_dim, out_dim, noisy)

    def forward(self, x):
        return self.out(torch.tanh(self.hidden(x)))


def dueling_combine(
    value: torch.Tensor, advantages: torch.Tensor, action_graph: torch.Tensor
) -> torch.Tensor:
    """Q = V + A - mean(A) with the mean over the actions of each state"""
    num_graphs = value.shape[0]
    mean = segment_mean(advantages, action_graph, num_graphs)
    return value[action_graph] + advantages - mean[action_graph]


class SchedulingNetwork(nn.Module):
    """Encoder plus the head selected by the configuration"""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.machine_layers = nn.ModuleList()
        self.operation_layers = nn.ModuleList()
        op_in, mach_in = 6, 3
        for _ in range(config.num_layers):
            self.machine_layers.append(
                MachineAttention(op_in, mach_in, d, config.num_heads)
            )
            self.operation_layers.append(OperationUpdate(op_in, d, config.hidden_dim))
            op_in = mach_in = d
        self.head = ScoringHead(4 * d, config.hidden_dim, config.atoms, config.noisy)
        self.value_stream = (
            ScoringHead(2 * d, config.hidden_dim, config.atoms, config.noisy)
            if config.dueling
            else None
        )
        self.critic = (
            ScoringHead(2 * d, config.hidden_dim, 1, False) if config.critic else None
        )
        if config.atoms > 1:
            self.register_buffer(
                "support", torch.linspace(config.v_min, config.v_max, config.atoms)
            )
        else:
            self.support = None

    def noisy_layers(self) -> List[NoisyLinear]:
        return [module for module in self.modules() if isinstance(module, NoisyLinear)]

    def reset_noise(self, generator: Optional[torch.Generator] = None):
        for layer in self.noisy_layers():
            layer.reset_noise(generator)

    def set_noise_mode(self, mode: str):
        if mode not in ("sampled", "zero"):
            raise ParameterError(f"unknown noise mode {mode!r}")
        for layer in self.noisy_layers():
            layer.noise_mode = mode

    def embed_machines(self, layer: int, op_h, mach_h, batch: GraphBatch):
        return self.machine_layers[layer](
            op_h, mach_h, batch.edge_op, batch.edge_mach, batch.edge_x
        )

    def embed_operations(self, layer: int, op_h, mach_emb, batch: GraphBatch):
        return self.operation_layers[layer](
            op_h, mach_emb, batch.edge_op, batch.edge_mach, batch.pred, batch.succ
        )

    @staticmethod
    def pool_graph(op_emb, mach_emb, batch: GraphBatch):
        return torch.cat(
            [
                segment_mean(op_emb, batch.op_graph, batch.num_graphs),
                segment_mean(mach_emb, batch.mach_graph, batch.num_graphs),
            ],
            dim=-1,
        )

    def encode(self, batch: GraphBatch) -> EmbeddingSet:
        op_h, mach_h = batch.op_x, batch.mach_x
        for layer in range(self.config.num_layers):
            mach_next = self.embed_machines(layer, op_h, mach_h, batch)
            op_h = self.embed_operations(layer, op_h, mach_next, batch)
            mach_h = mach_next
        return EmbeddingSet(
            op=op_h, mach=mach_h, graph=self.pool_graph(op_h, mach_h, batch)
        )

    def score_actions(self, emb: EmbeddingSet, batch: GraphBatch, mode: str = "q"):
        """Per-action scalar scores, or atom logits in distributional mode"""
        if batch.action_op.numel() == 0:
            raise ContractViolation("no action to score")
        if mode not in ("policy", "q", "distributional"):
            raise ParameterError(f"unknown scoring mode {mode!r}")
        x = torch.cat(
            [
                emb.op[batch.action_op],
                emb.mach[batch.action_mach],
                emb.graph[batch.action_graph],
            ],
            dim=-1,
        )
        scores = self.head(x)
        if mode == "policy":
            return scores.squeeze(-1)
        if self.value_stream is not None:
            scores = dueling_combine(
                self.value_stream(emb.graph), scores, batch.action_graph
            )
        if mode == "distributional":
            return scores
        if self.support is not None:
            return (torch.softmax(scores, dim=-1) * self.support).sum(-1)
        return scores.squeeze(-1)

    def state_value(self, emb: EmbeddingSet) -> torch.Tensor:
        if self.critic is None:
            raise ContractViolation("network built without a critic head")
        return self.critic(emb.graph).squeeze(-1)

    def forward(self, batch: GraphBatch, mode: str = "q"):
        return self.score_actions(self.encode(batch), batch, mode)


def network_dtype(network: nn.Module) -> torch.dtype:
    return next(network.parameters()).dtype


def score_states(
    network: SchedulingNetwork, states: Sequence[ScheduleState], mode: str = "q"
):
    """Feasible actions of every state with their scores, without gradients

    Distributional networks are scored by the expected value of each action.
    """
    candidates = [feasible_actions(state) for state in states]
    batch = collate(
        [extract_features(state) for state in states],
        candidates,
        dtype=network_dtype(network),
    )
    with torch.no_grad():
        scores = network(batch, mode).cpu().numpy()
    return candidates, np.split(scores, np.cumsum(batch.action_counts)[:-1])


def masked_softmax(scores, mask) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractViolation("every action is masked")
    shifted = np.where(mask, scores - scores[mask].max(), -np.inf)
    weights = np.exp(shifted)
    return weights / weights.sum()


def masked_select(scores, mask, mode: str = "argmax", rng=None) -> int:
    """Index of the selected action, ties of argmax go to the lowest index"""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractViolation("every action is masked")
    if mode == "argmax":
        return int(np.argmax(np.where(mask, scores, -np.inf)))
    if mode == "sample":
        return int(rng.choice(len(scores), p=masked_softmax(scores, mask)))
    raise ParameterError(f"unknown selection mode {mode!r}")


def gradients(loss: torch.Tensor, params: Sequence[torch.Tensor]) -> List[torch.Tensor]:
    """Reverse-mode gradients, zero for parameters the loss does not use"""
    params = list(params)
    if not torch.isfinite(loss).all():
        raise TrainingError("non-finite loss", loss=float(loss.detach().sum()))
    if not loss.requires_grad:
        return [torch.zeros_like(p) for p in params]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


@dataclass
class Checkpoint:
    network: SchedulingNetwork
    algorithm: str
    problem: str
    algorithm_config: Dict[str, Any]
    metadata: Dict[str, Any]


def save_checkpoint(
    path: pathlib.Path,
    network: SchedulingNetwork,
    algorithm: str,
    problem: str,
    algorithm_config: Dict[str, Any],
    metadata: Dict[str, Any],
) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "encoder": asdict(network.config),
            "algorithm": algorithm,
            "problem": problem,
            "algorithm_config": dict(algorithm_config),
            "state_dict": network.state_dict(),
            "metadata": dict(metadata),
        },
        path,
    )
    log.debug("Saved checkpoint", path=str(path), **metadata)
    return path


def load_checkpoint(path: pathlib.Path) -> Checkpoint:
    content = torch.load(pathlib.Path(path), map_location="cpu", weights_only=True)
    if content.get("format") != CHECKPOINT_FORMAT:
        raise ParameterError(f"unsupported checkpoint format {content.get('format')!r}")
    network = SchedulingNetwork(EncoderConfig(**content["encoder"]))
    network.load_state_dict(content["state_dict"])
    network.eval()
    return Checkpoint(
        network=network,
        algorithm=content["algorithm"],
        problem=content["problem"],
        algorithm_config=content["algorithm_config"],
        metadata=content["metadata"],
    )
