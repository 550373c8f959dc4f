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
import math

import numpy as np
import pytest
import torch

import rainbow_jobshop.encoder

from rainbow_jobshop.encoder import SchedulingNetwork, collate
from rainbow_jobshop.env import Action, extract_features, feasible_actions, reset, step
from rainbow_jobshop.exceptions import ContractViolation, ParameterError, TrainingError
from rainbow_jobshop.instances import ProblemInstance, generate_instances, parse_jssp

import fixtures


def build(dtype=torch.float64, seed=0, **overrides):
    torch.manual_seed(seed)
    return SchedulingNetwork(fixtures.tiny_encoder(**overrides)).to(dtype)


def batch_of(states, dtype=torch.float64):
    return collate(
        [extract_features(s) for s in states],
        [feasible_actions(s) for s in states],
        dtype=dtype,
    )


@pytest.mark.parametrize(
    "kwargs",
    [
        {"embed_dim": 0},
        {"num_layers": 0},
        {"embed_dim": 8, "num_heads": 3},
        {"atoms": 0},
        {"atoms": 11, "v_min": 0.0, "v_max": 0.0},
    ],
)
def test_encoder_config_invalid(kwargs):
    with pytest.raises(ParameterError):
        rainbow_jobshop.encoder.EncoderConfig(**kwargs)


def test_normalize_features():
    raw = extract_features(reset(fixtures.flexible()))
    features = rainbow_jobshop.encoder.normalize_features(raw)
    # nothing scheduled yet: constant column
    assert features.op_features[:, 0].tolist() == [0.0, 0.0, 0.0]
    np.testing.assert_allclose(features.op_features.mean(axis=0), 0.0, atol=1e-12)
    assert features.machine_features[:, 1].tolist() == [0.0, 0.0]
    assert raw.op_features[0, 2] == 4.0


def test_normalize_features_symmetric_column():
    raw = extract_features(reset(fixtures.flexible()))
    raw.machine_features[:, 0] = [0.0, 2.0]
    features = rainbow_jobshop.encoder.normalize_features(raw)
    assert features.machine_features[:, 0].tolist() == [-1.0, 1.0]


def test_normalize_features_stats():
    raw = extract_features(reset(fixtures.chain()))
    stats = {
        "op": (np.zeros(6), np.full(6, 2.0)),
        "machine": (np.ones(3), np.zeros(3)),
        "edge": (0.0, 1.0),
    }
    features = rainbow_jobshop.encoder.normalize_features(raw, stats)
    np.testing.assert_allclose(features.op_features, raw.op_features / 2)
    np.testing.assert_allclose(features.machine_features, raw.machine_features - 1)


def test_zscore_random_matrix():
    values = np.random.default_rng(3).normal(5.0, 3.0, size=(100, 6))
    scored = rainbow_jobshop.encoder._zscore(values)
    np.testing.assert_allclose(scored.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(scored.std(axis=0), 1.0, atol=1e-9)


def test_collate_offsets():
    first = reset(fixtures.oracle())
    second = step(first, Action(0, 0, 0))[0]
    batch = batch_of([first, second])
    assert batch.op_x.shape == (8, 6)
    assert batch.mach_x.shape == (4, 3)
    assert batch.edge_x.shape == (8, 1)
    assert batch.num_graphs == 2
    assert batch.action_counts == [2, 2]
    assert batch.action_op.tolist() == [0, 2, 5, 6]
    assert batch.action_mach.tolist() == [0, 1, 3, 3]
    assert batch.action_graph.tolist() == [0, 0, 1, 1]
    assert batch.op_graph.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    assert batch.pred.tolist() == [-1, 0, -1, 2, -1, 4, -1, 6]
    assert batch.edge_mach.tolist() == [0, 1, 1, 0, 2, 3, 3, 2]


def test_segment_softmax():
    scores = torch.tensor([1.0, 2.0, 3.0, -1.0, 5.0], dtype=torch.float64)
    index = torch.tensor([0, 0, 1, 1, 1])
    result = rainbow_jobshop.encoder.segment_softmax(scores, index, 2)
    torch.testing.assert_close(result[:2], torch.softmax(scores[:2], 0))
    torch.testing.assert_close(result[2:], torch.softmax(scores[2:], 0))
    log_result = rainbow_jobshop.encoder.segment_log_softmax(scores, index, 2)
    torch.testing.assert_close(log_result[2:], torch.log_softmax(scores[2:], 0))


def test_segment_softmax_singleton():
    result = rainbow_jobshop.encoder.segment_softmax(
        torch.tensor([[7.0, -3.0]]), torch.tensor([0]), 1
    )
    assert result.tolist() == [[1.0, 1.0]]


def test_segment_mean():
    values = torch.tensor(np.random.default_rng(0).normal(size=(6, 3)))
    index = torch.tensor([1, 0, 1, 1, 0, 2])
    result = rainbow_jobshop.encoder.segment_mean(values, index, 3)
    for graph in range(3):
        expected = values[index == graph].mean(0)
        torch.testing.assert_close(result[graph], expected, atol=1e-12, rtol=0)


def test_machine_attention_hand_computed():
    layer = rainbow_jobshop.encoder.MachineAttention(1, 1, 1, 1)
    with torch.no_grad():
        layer.w_op.weight.fill_(2.0)
        layer.w_mach.weight.fill_(1.0)
        layer.w_edge.weight.fill_(0.5)
        layer.a_op.fill_(1.0)
        layer.a_mach.fill_(1.0)
        layer.a_edge.fill_(1.0)
    op_h = torch.tensor([[1.0]])
    mach_h = torch.tensor([[1.0]])
    edge_x = torch.tensor([[2.0]])
    result = layer(op_h, mach_h, torch.tensor([0]), torch.tensor([0]), edge_x)
    # edge score 2 + 1 + 1 = 4, self score 1 + 1 = 2
    weights = torch.softmax(torch.tensor([4.0, 2.0]), 0)
    expected = torch.sigmoid(weights[0] * (2.0 + 1.0) + weights[1] * 1.0)
    torch.testing.assert_close(result, expected.view(1, 1))


def test_machine_attention_without_neighbours():
    layer = rainbow_jobshop.encoder.MachineAttention(6, 3, 8, 2)
    mach_h = torch.randn(2, 3)
    result = layer(
        torch.randn(1, 6),
        mach_h,
        torch.tensor([0]),
        torch.tensor([0]),
        torch.randn(1, 1),
    )
    # the second machine only attends to itself
    expected = torch.sigmoid(layer.w_mach(mach_h[1:]))
    torch.testing.assert_close(result[1:], expected)


def test_operation_update_single_candidate():
    layer = rainbow_jobshop.encoder.OperationUpdate(6, 4, 8)
    op_h = torch.randn(2, 6)
    mach_emb = torch.randn(2, 4)
    edge_op = torch.tensor([0, 1])
    edge_mach = torch.tensor([1, 0])
    pred = torch.tensor([-1, 0])
    succ = torch.tensor([1, -1])
    result = layer(op_h, mach_emb, edge_op, edge_mach, pred, succ)
    expected = layer.project(
        torch.nn.functional.elu(
            torch.cat(
                [
                    layer.mlp_pred(torch.stack([layer.start, op_h[0]])),
                    layer.mlp_succ(torch.stack([op_h[1], layer.end])),
                    layer.mlp_mach(mach_emb[[1, 0]]),
                    layer.mlp_self(op_h),
                ],
                dim=-1,
            )
        )
    )
    torch.testing.assert_close(result, expected)


@pytest.mark.parametrize(
    "overrides,mode,shape",
    [
        ({}, "policy", (2,)),
        ({}, "q", (2,)),
        ({"dueling": True}, "q", (2,)),
        ({"noisy": True}, "q", (2,)),
        ({"atoms": 11}, "distributional", (2, 11)),
        ({"atoms": 11, "dueling": True}, "distributional", (2, 11)),
    ],
)
def test_network_output_shapes(overrides, mode, shape):
    network = build(**overrides)
    assert network(batch_of([reset(fixtures.oracle())]), mode).shape == shape


def test_network_distributional_expectation():
    network = build(atoms=11, v_min=-10.0, v_max=0.0)
    batch = batch_of([reset(fixtures.oracle())])
    logits = network(batch, "distributional")
    q = network(batch, "q")
    expected = (torch.softmax(logits, -1) * torch.linspace(-10.0, 0.0, 11)).sum(-1)
    torch.testing.assert_close(q, expected.to(q.dtype))
    assert ((q >= -10.0) & (q <= 0.0)).all()


def test_network_unknown_mode():
    with pytest.raises(ParameterError):
        build()(batch_of([reset(fixtures.oracle())]), "value")


def test_network_no_action():
    network = build()
    state = reset(fixtures.oracle())
    batch = collate([extract_features(state)], [[]], dtype=torch.float64)
    with pytest.raises(ContractViolation):
        network(batch, "q")


def test_network_without_critic():
    network = build()
    emb = network.encode(batch_of([reset(fixtures.oracle())]))
    with pytest.raises(ContractViolation):
        network.state_value(emb)


def test_network_first_layer_widths():
    network = build(num_layers=2)
    assert network.machine_layers[0].w_op.in_features == 6
    assert network.machine_layers[0].w_mach.in_features == 3
    assert network.machine_layers[0].w_edge.in_features == 1
    assert network.machine_layers[1].w_op.in_features == 8
    assert network.operation_layers[1].start.shape == (8,)


def test_network_batch_is_disjoint_union():
    network = build(num_layers=2, num_heads=2, dueling=True)
    first = reset(fixtures.oracle())
    second = step(reset(fixtures.flexible()), Action(1, 0, 0))[0]
    together = network(batch_of([first, second]), "q")
    apart = torch.cat(
        [network(batch_of([first]), "q"), network(batch_of([second]), "q")]
    )
    torch.testing.assert_close(together, apart)


def test_identical_actions_identical_scores():
    # both jobs are identical, so are their first operations
    instance = parse_jssp("2 1\n0 3\n0 3\n")
    scores = build()(batch_of([reset(instance)]), "policy")
    torch.testing.assert_close(scores[0], scores[1])


def test_job_permutation_equivariance():
    network = build(num_layers=2, num_heads=2)
    (instance,) = generate_instances("fjsp", 4, 5, 1, 3)
    order = [2, 0, 3, 1]
    permuted = ProblemInstance(
        instance.num_machines, tuple(instance.jobs[j] for j in order)
    )
    position = {job: index for index, job in enumerate(order)}
    state, other = reset(instance), reset(permuted)
    for _ in range(4):
        (actions,), (scores,) = rainbow_jobshop.encoder.score_states(network, [state])
        (other_actions,), (other_scores,) = rainbow_jobshop.encoder.score_states(
            network, [other]
        )
        mapped = [Action(position[a.job], a.op, a.machine) for a in actions]
        assert sorted(mapped) == other_actions
        by_action = dict(zip(other_actions, other_scores))
        np.testing.assert_allclose(
            scores, [by_action[a] for a in mapped], rtol=1e-7, atol=1e-9
        )
        with torch.no_grad():
            torch.testing.assert_close(
                network.encode(batch_of([state])).graph,
                network.encode(batch_of([other])).graph,
            )
        state = step(state, actions[-1])[0]
        other = step(other, mapped[-1])[0]


def test_one_network_every_size():
    network = build(num_layers=2)
    parameters = [p.detach().clone() for p in network.parameters()]
    for problem, n, m in [("jssp", 6, 6), ("fjsp", 10, 5), ("jssp", 2, 2)]:
        (instance,) = generate_instances(problem, n, m, 1, 0)
        state = reset(instance)
        (actions,), (scores,) = rainbow_jobshop.encoder.score_states(
            network, [state], "policy"
        )
        assert len(scores) == len(actions) == len(feasible_actions(state))
        assert np.isfinite(scores).all()
        probabilities = rainbow_jobshop.encoder.masked_softmax(
            scores, np.ones(len(scores), bool)
        )
        assert probabilities.sum() == pytest.approx(1.0)
    for before, after in zip(parameters, network.parameters()):
        assert torch.equal(before, after)


def test_score_states():
    network = build()
    states = [reset(fixtures.oracle()), reset(fixtures.flexible())]
    candidates, scores = rainbow_jobshop.encoder.score_states(network, states, "q")
    assert candidates[1] == feasible_actions(states[1])
    assert [len(s) for s in scores] == [2, 3]


def test_dueling_combine():
    result = rainbow_jobshop.encoder.dueling_combine(
        torch.tensor([[5.0], [2.0]]),
        torch.tensor([[1.0], [1.0], [1.0], [0.0], [3.0]]),
        torch.tensor([0, 0, 0, 1, 1]),
    )
    assert result.squeeze(-1).tolist() == [5.0, 5.0, 5.0, 0.5, 3.5]


def test_noisy_linear_init():
    layer = rainbow_jobshop.encoder.NoisyLinear(16, 4)
    assert torch.allclose(layer.weight_sigma, torch.full((4, 16), 0.5 / 4))
    assert torch.allclose(layer.bias_sigma, torch.full((4,), 0.5 / 4))


def test_noisy_linear_zero_sigma():
    layer = rainbow_jobshop.encoder.NoisyLinear(3, 2)
    with torch.no_grad():
        layer.weight_sigma.zero_()
        layer.bias_sigma.zero_()
    x = torch.randn(5, 3)
    expected = x @ layer.weight_mu.T + layer.bias_mu
    torch.testing.assert_close(layer(x), expected)


def test_noisy_linear_modes():
    layer = rainbow_jobshop.encoder.NoisyLinear(3, 2)
    generator = torch.Generator().manual_seed(0)
    x = torch.randn(4, 3)
    zero = rainbow_jobshop.encoder.noisy_linear(x, layer, "zero")
    layer.reset_noise(generator)
    again = rainbow_jobshop.encoder.noisy_linear(x, layer, "zero")
    assert torch.equal(zero, again)
    assert layer.noise_mode == "sampled"
    first = layer(x)
    layer.reset_noise(generator)
    assert not torch.equal(first, layer(x))


def test_noisy_linear_mean():
    layer = rainbow_jobshop.encoder.NoisyLinear(4, 1).double()
    generator = torch.Generator().manual_seed(1)
    x = torch.ones(1, 4, dtype=torch.float64)
    samples = []
    with torch.no_grad():
        for _ in range(10000):
            layer.reset_noise(generator)
            samples.append(float(layer(x)))
        expected = float(rainbow_jobshop.encoder.noisy_linear(x, layer, "zero"))
    samples = np.asarray(samples)
    standard_error = samples.std() / math.sqrt(len(samples))
    assert abs(samples.mean() - expected) < 4 * standard_error


def test_network_noise_mode():
    network = build(noisy=True)
    batch = batch_of([reset(fixtures.oracle())])
    network.set_noise_mode("zero")
    first = network(batch, "q")
    network.reset_noise(torch.Generator().manual_seed(3))
    assert torch.equal(first, network(batch, "q"))
    network.set_noise_mode("sampled")
    assert not torch.equal(first, network(batch, "q"))
    with pytest.raises(ParameterError):
        network.set_noise_mode("off")


@pytest.mark.parametrize(
    "scores,mask,index",
    [
        ([1.0, 3.5, 2.0], [True, True, True], 1),
        ([2.0, 2.0], [True, True], 0),
        ([9.0, 1.0, 2.0], [False, True, True], 2),
    ],
)
def test_masked_select_argmax(scores, mask, index):
    assert rainbow_jobshop.encoder.masked_select(scores, mask) == index


def test_masked_select_all_masked():
    with pytest.raises(ContractViolation):
        rainbow_jobshop.encoder.masked_select([1.0], [False])
    with pytest.raises(ContractViolation):
        rainbow_jobshop.encoder.masked_softmax([1.0], [False])


def test_masked_select_sample():
    rng = np.random.default_rng(0)
    mask = [True, False, True]
    picks = {
        rainbow_jobshop.encoder.masked_select([0.0, 5.0, 0.0], mask, "sample", rng)
        for _ in range(50)
    }
    assert picks == {0, 2}


def test_masked_softmax():
    result = rainbow_jobshop.encoder.masked_softmax([0.0, 0.0], [True, False])
    assert result.tolist() == [1.0, 0.0]


def test_gradients_constant_loss():
    network = build()
    grads = rainbow_jobshop.encoder.gradients(
        torch.tensor(3.0), list(network.parameters())
    )
    assert all(not g.any() for g in grads)


def test_gradients_unused_parameter():
    network = build(dueling=True)
    loss = network(batch_of([reset(fixtures.oracle())]), "policy").sum()
    params = list(network.value_stream.parameters())
    grads = rainbow_jobshop.encoder.gradients(loss, params)
    assert all(not g.any() for g in grads)


def test_gradients_non_finite():
    network = build()
    loss = network(batch_of([reset(fixtures.oracle())]), "q").sum() * float("nan")
    with pytest.raises(TrainingError):
        rainbow_jobshop.encoder.gradients(loss, list(network.parameters()))


def test_gradients_finite_differences():
    network = build(num_layers=2)
    batch = batch_of([reset(fixtures.oracle())])
    params = list(network.parameters())

    def loss_value():
        return network(batch, "q").pow(2).sum()

    grads = rainbow_jobshop.encoder.gradients(loss_value(), params)
    h = 1e-4
    rng = np.random.default_rng(0)
    with torch.no_grad():
        for param, grad in zip(params, grads):
            flat = param.view(-1)
            count = min(3, flat.numel())
            for position in rng.choice(flat.numel(), size=count, replace=False):
                saved = float(flat[position])
                flat[position] = saved + h
                upper = float(loss_value())
                flat[position] = saved - h
                lower = float(loss_value())
                flat[position] = saved
                numeric = (upper - lower) / (2 * h)
                analytic = float(grad.view(-1)[position])
                assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric))


def test_checkpoint_roundtrip(tmp_path):
    network = build(dtype=torch.float32, dueling=True)
    path = rainbow_jobshop.encoder.save_checkpoint(
        tmp_path / "runs" / "best.pt",
        network,
        "dqn",
        "jssp",
        {"gamma": 0.99},
        {"episode": 4, "label": "dqn+dueling"},
    )
    checkpoint = rainbow_jobshop.encoder.load_checkpoint(path)
    assert checkpoint.algorithm == "dqn"
    assert checkpoint.problem == "jssp"
    assert checkpoint.algorithm_config == {"gamma": 0.99}
    assert checkpoint.metadata == {"episode": 4, "label": "dqn+dueling"}
    assert checkpoint.network.config == network.config
    batch = batch_of([reset(fixtures.oracle())], dtype=torch.float32)
    torch.testing.assert_close(checkpoint.network(batch, "q"), network(batch, "q"))


def test_checkpoint_unknown_format(tmp_path):
    path = tmp_path / "old.pt"
    torch.save({"format": 99}, path)
    with pytest.raises(ParameterError):
        rainbow_jobshop.encoder.load_checkpoint(path)
