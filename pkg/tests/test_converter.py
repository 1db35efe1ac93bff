import numpy as np
import pytest

from tasklab import spaces
from tasklab.converter import (ConversionError, PlacementConverter, RewardTransform, SystemMetrics,
                               SystemState)
from tasklab.spaces import DeploymentParams, build_placement_schema, validate_value

from conftest import chain


def converter(n_ops, devices, variant=spaces.GRAPH, **kw):
    g = chain(n_ops)
    return g, PlacementConverter(build_placement_schema(DeploymentParams(devices, g), variant), **kw)


def test_state_two_op_chain():
    g, c = converter(2, ["d0", "d1"])
    s = c.system_to_agent_state(SystemState(g, 1, {0: 0}))
    assert s["embeddings"].tolist() == [[0, 1, 1, 0], [1, 0, 0, 0]]
    assert s["current_node_num"] == 1
    assert s["in_neighbors"][1].tolist() == [0, -1, -1, -1, -1]
    assert s["out_neighbors"][0].tolist() == [1, -1, -1, -1, -1]
    assert validate_value(c.schema.input_space, s) is None


def test_state_single_op():
    g, c = converter(1, ["cpu"])
    s = c.system_to_agent_state(SystemState(g, 0))
    assert s["embeddings"][0, :2].tolist() == [1, 0]


def test_state_recurrent():
    g, c = converter(3, ["a", "b"], spaces.RECURRENT)
    s = c.system_to_agent_state(SystemState(g, 2, {0: 1, 1: 0}))
    assert s.tolist() == [[0, 1], [1, 0], [0, 0]]


def test_state_properties(rng):
    g, c = converter(6, ["a", "b", "c"])
    for cur in range(6):
        partial = {i: int(rng.integers(3)) for i in range(cur)}
        s1 = c.system_to_agent_state(SystemState(g, cur, partial))
        s2 = c.system_to_agent_state(SystemState(g, cur, partial))
        assert s1["embeddings"][:, 0].sum() == 1
        assert np.array_equal(s1["embeddings"], s2["embeddings"])
        assert validate_value(c.schema.input_space, s1) is None


def test_state_errors():
    _, c = converter(3, ["a"])
    with pytest.raises(ConversionError):
        c.system_to_agent_state(SystemState(chain(4), 0))
    with pytest.raises(ConversionError):
        c.system_to_agent_state(SystemState(chain(3), 3))
    with pytest.raises(ConversionError):
        c.system_to_agent_state(SystemState(chain(3), 1, {0: 1}))


def test_action_roundtrip():
    _, c = converter(1, ["cpu0", "gpu0"])
    assert c.system_to_agent_action("gpu0") == 1
    assert c.agent_to_system_action(1) == "gpu0"
    _, c = converter(1, ["cpu0"])
    with pytest.raises(ConversionError):
        c.agent_to_system_action(1)
    with pytest.raises(ConversionError):
        c.system_to_agent_action("tpu")
    with pytest.raises(ConversionError):
        c.agent_to_system_action(0.5)


def test_action_bijection_permuted(rng):
    names = [f"dev{i}" for i in rng.permutation(8)]
    _, c = converter(1, names)
    for i, name in enumerate(names):
        assert c.system_to_agent_action(name) == i
        assert c.agent_to_system_action(c.system_to_agent_action(name)) == name
        assert c.system_to_agent_action(c.agent_to_system_action(i)) == i


def test_rewards():
    _, c = converter(1, ["cpu"])
    assert c.system_to_agent_reward(SystemMetrics(2.5)) == -2.5
    assert c.system_to_agent_reward(SystemMetrics(0.0)) == 0.0
    assert c.system_to_agent_reward(SystemMetrics(100.0, valid=False)) == -100.0
    assert c.system_to_agent_reward({"run_time": 3.0, "valid": False}) == -100.0
    _, c = converter(1, ["cpu"], penalty=7.0, reward_transform=RewardTransform(scale=0.5, shift=1.0))
    assert c.system_to_agent_reward(SystemMetrics(1.0, valid=False)) == -2.5
