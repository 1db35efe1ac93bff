import numpy as np
import pytest

from tasklab import spaces
from tasklab.converter import PlacementConverter, RewardTransform
from tasklab.env import (INCREMENTAL, TERMINAL, DistributionSpec, EnvError, GroupedGraph, PlacementEnv,
                         make_instance, sample_instance)
from tasklab.graphs import DeviceSet, DeviceSpec, default_devices, generate_graph
from tasklab.spaces import DeploymentParams, build_placement_schema

from conftest import chain


def make_env(instance, devices, groups_per_step=1, mode=INCREMENTAL, **kw):
    schema = build_placement_schema(DeploymentParams(devices.names, instance.comp_graph), spaces.GRAPH)
    return PlacementEnv(instance, devices, PlacementConverter(schema, **kw), groups_per_step, mode)


def chain_instance(n, cost=1.0, out_bytes=0):
    inst = make_instance("mlp-chain", {"layers": n}, 0)
    return type(inst)(chain(n, cost, out_bytes), "mlp-chain", inst.params, 0)


def test_nmt_op_count_by_formula():
    g = generate_graph("nmt-like", {"layers": 1, "unroll_length": 2, "batch_size": 32}, 0)
    cells = 2 * 2 * 1  # encoder + decoder cells
    assert g.num_ops == cells + 2 + 1
    assert sum(1 for o in g.ops if o.kind == "attention") == 2
    mlp = generate_graph("mlp-chain", {"layers": 3}, 0)
    assert mlp.num_ops == 3 and mlp.edges == ((0, 1), (1, 2))


def test_cost_scales_linearly_with_batch():
    a = generate_graph("nmt-like", {"batch_size": 32}, 0)
    b = generate_graph("nmt-like", {"batch_size": 64}, 0)
    assert [o.output_bytes * 2 for o in a.ops] == [o.output_bytes for o in b.ops]
    ratio = np.array([o.compute_cost for o in b.ops]) / np.array([o.compute_cost for o in a.ops])
    assert np.allclose(ratio, 2.0, atol=1e-6)


def test_sampling_modes():
    dist = DistributionSpec(held_out_family="cnn-like")
    rng = np.random.default_rng(1)
    fixed = [sample_instance("fixed-blackbox", dist, rng).content_hash for _ in range(5)]
    assert len(set(fixed)) == 1
    rand = [sample_instance("randomized-blackbox", dist, rng) for _ in range(5)]
    assert len({r.content_hash for r in rand}) == 5
    assert all(r.family == "nmt-like" and 32 <= r.params["batch_size"] <= 256 for r in rand)
    ood = sample_instance("fixed-out-of-dist", dist)
    assert ood.family == "cnn-like"
    with pytest.raises(EnvError):
        sample_instance("fixed-out-of-dist", DistributionSpec())
    with pytest.raises(EnvError):
        sample_instance("randomized-in-dist", dist, None)
    with pytest.raises(EnvError):
        sample_instance("sideways", dist, rng)


def test_instance_provenance_roundtrip():
    inst = make_instance("nmt-like", {"batch_size": 48}, 9)
    again = type(inst).from_provenance(inst.provenance())
    assert again.content_hash == inst.content_hash


def test_terminal_rewards():
    devices = DeviceSet([DeviceSpec("a", 1.0, 10)], [[0]])
    env = make_env(chain_instance(2, cost=1.25), devices, mode=TERMINAL)
    env.reset()
    rewards = [env.step([0])[1], env.step([0])[1]]
    assert rewards == [0.0, -2.5]
    assert env.done
    with pytest.raises(EnvError):
        env.step([0])


def test_incremental_unchanged_is_zero():
    devices = DeviceSet([DeviceSpec("a", 1.0, 10), DeviceSpec("b", 1.0, 10)], [[0, 1], [1, 0]])
    env = make_env(chain_instance(3, out_bytes=1), devices)
    env.reset()
    assert env.step([0])[1] == 0.0
    assert env.step([1])[1] < 0.0  # a chain only pays the transfer


def test_incremental_rewards_telescope():
    rng = np.random.default_rng(3)
    devices = default_devices(2, gpu_memory=2_000_000)
    inst = make_instance("nmt-like", {}, 11)
    env = make_env(inst, devices, groups_per_step=3)
    for _ in range(20):
        groups = rng.integers(0, 12, inst.comp_graph.num_ops)
        env.reset(groups, 12)
        total = 0.0
        while not env.done:
            total += env.step(rng.integers(0, 3, len(env.next_groups())))[1]
        assert abs(total - (env.initial_run_time - env.last_measured)) <= 1e-9


def test_reward_transform_applies_to_increments():
    devices = DeviceSet([DeviceSpec("a", 1.0, 10), DeviceSpec("b", 2.0, 10)], [[0, 1e9], [1e9, 0]])
    env = make_env(chain_instance(2), devices, reward_transform=RewardTransform(scale=0.5))
    env.reset()
    r = env.step([1])[1]
    assert r == pytest.approx(0.5 * (2.0 - 1.5))


def test_env_errors():
    devices = default_devices(1)
    inst = chain_instance(2)
    with pytest.raises(EnvError):
        make_env(inst, devices, mode="sometimes")
    env = make_env(inst, devices)
    env.reset()
    with pytest.raises(EnvError):
        env.step([0, 0])
    with pytest.raises(EnvError):
        env.step([5])


def test_grouped_graph_skips_empty_groups():
    g = chain(4, out_bytes=8)
    gg = GroupedGraph(g, [0, 0, 3, 3], 5)
    assert gg.active == (0, 3)
    assert gg.traffic[0, 3] == 8
    assert gg.op_placement({0: 1, 3: 2}).assignment == (1, 1, 2, 2)
    ins, outs = gg.neighbor_table(2)
    assert ins[3].tolist() == [0, -1] and outs[0].tolist() == [3, -1]
    with pytest.raises(EnvError):
        GroupedGraph(g, [0, 0, 5, 3], 5)
