import numpy as np
import pytest

from tasklab import spaces
from tasklab.agents import HierarchicalPlacer, grouper_config, placer_config
from tasklab.env import GroupedGraph, make_instance
from tasklab.graphs import default_devices, op_features
from tasklab.simulator import Placement
from tasklab.taskgraph import (CycleError, TaskGraph, TaskGraphError, TaskNode, add_edge, add_subtask, execute,
                               validate_topology)


def stub(name):
    return TaskNode(name, lambda x, rng: x + [name])


def test_grouper_placer_hierarchy():
    g = add_subtask(TaskGraph(), None, stub("grouper"))
    g = add_subtask(g, "grouper", stub("placer"))
    assert len(g.nodes) == 2 and g.edges == [("grouper", "placer")]
    assert g.roots == ("grouper",)


def test_self_child_is_cycle():
    with pytest.raises(CycleError) as e:
        add_subtask(add_subtask(TaskGraph(), None, stub("a")), "a", stub("a"))
    assert e.value.cycle == ["a"]
    with pytest.raises(CycleError):
        add_subtask(TaskGraph(), None, TaskNode("a", lambda x, r: x, children=("a",)))


def test_independent_roots():
    g = add_subtask(add_subtask(TaskGraph(), None, stub("a")), None, stub("b"))
    assert g.edges == [] and validate_topology(g) == ["a", "b"]
    out = execute(g, {"a": [], "b": [0]})
    assert out == {"a": ["a"], "b": [0, "b"]}


def test_structural_errors():
    g = add_subtask(TaskGraph(), None, stub("a"))
    with pytest.raises(TaskGraphError):
        add_subtask(g, None, stub("a"))
    with pytest.raises(TaskGraphError):
        add_subtask(g, "nope", stub("b"))
    with pytest.raises(TaskGraphError):
        validate_topology(TaskGraph({"a": TaskNode("a", None, children=("ghost",))}, ("a",)))
    with pytest.raises(TaskGraphError):
        execute(g, {})


def test_cycle_certificate():
    g = add_subtask(add_subtask(TaskGraph(), None, stub("A")), "A", stub("B"))
    g = add_subtask(g, "B", stub("C"))
    with pytest.raises(CycleError) as e:
        add_edge(g, "C", "B")
    assert sorted(e.value.cycle) == ["B", "C"]
    two = TaskGraph({"A": TaskNode("A", None, children=("B",)), "B": TaskNode("B", None, children=("A",))})
    with pytest.raises(CycleError) as e:
        validate_topology(two)
    assert set(e.value.cycle) == {"A", "B"}


def test_chain_order_matches_independent_sort():
    g = add_subtask(TaskGraph(), None, stub("A"))
    g = add_subtask(g, "A", stub("B"))
    g = add_subtask(g, "B", stub("C"))
    assert validate_topology(g) == ["A", "B", "C"]
    assert execute(g, {"A": []})["C"] == ["A", "B", "C"]


def test_random_dag_orders(rng):
    for _ in range(10):
        n = int(rng.integers(2, 12))
        names = [f"t{i:02d}" for i in rng.permutation(n)]
        g = TaskGraph()
        for i, name in enumerate(names):
            g = add_subtask(g, None if i == 0 or rng.random() < 0.2 else names[int(rng.integers(i))], stub(name))
        for _ in range(n):
            a, b = sorted(rng.choice(n, 2, replace=False))
            g = add_edge(g, names[a], names[b])
        order = validate_topology(g)
        pos = {name: i for i, name in enumerate(order)}
        assert all(pos[u] < pos[v] for u, v in g.edges)


def test_single_node_composition():
    node = TaskNode("n", lambda x, rng: x * 3, pre_transform=lambda x: x + 1, post_transform=lambda y: -y)
    g = add_subtask(TaskGraph(), None, node)
    assert execute(g, {"n": 2}) == {"n": -9}


def test_fan_in_orders_parents_by_name():
    g = add_subtask(add_subtask(TaskGraph(), None, stub("b")), None, stub("a"))
    g = add_subtask(g, "b", TaskNode("z", lambda x, rng: x))
    g = add_edge(g, "a", "z")
    out = execute(g, {"a": [1], "b": [2]})
    assert out["z"] == ([1, "a"], [2, "b"])


def test_execution_deterministic_and_adding_nodes_is_transparent():
    noisy = TaskNode("r", lambda x, rng: x + rng.normal())
    g = add_subtask(TaskGraph(), None, noisy)
    a = execute(g, {"r": 0.0}, {"r": np.random.default_rng(1)})
    b = execute(g, {"r": 0.0}, {"r": np.random.default_rng(1)})
    assert a == b
    g2 = add_subtask(g, "r", TaskNode("s", lambda x, rng: 2 * x))
    c = execute(g2, {"r": 0.0}, {"r": np.random.default_rng(1)})
    assert c["r"] == a["r"] and c["s"] == 2 * a["r"]


def test_json_roundtrip():
    g = add_subtask(add_subtask(TaskGraph(), None, stub("grouper")), "grouper", stub("placer"))
    d = g.to_dict()
    back = TaskGraph.from_dict(d, {"grouper": lambda x, r: x, "placer": lambda x, r: x})
    assert back.to_json() == g.to_json()
    with pytest.raises(TaskGraphError):
        TaskGraph.from_dict(d, {"grouper": lambda x, r: x})


def test_grouper_feeds_placer():
    inst = make_instance("nmt-like", {"unroll_length": 4}, 0)
    devices = default_devices(2)
    rng = np.random.default_rng(0)
    model = HierarchicalPlacer(grouper_config(num_groups=6), placer_config(num_groups=6), devices.names, rng)
    graph = inst.comp_graph
    feats = op_features(graph)

    def to_grouped(groups):
        grouped = GroupedGraph(graph, groups, model.num_groups)
        return grouped, grouped.group_features(feats)

    def place(x, r):
        grouped, gfeat = x
        steps = model.place_groups(grouped, gfeat, grouped.active, {}, devices, r)
        return grouped.op_placement(dict(zip(grouped.active, (s.action for s in steps))))

    g = add_subtask(TaskGraph(), None, TaskNode("grouper", lambda x, r: model.group(x, r)[0], kind="grouper"))
    g = add_subtask(g, "grouper", TaskNode("placer", place, kind="placer", pre_transform=to_grouped))
    out = execute(g, {"grouper": feats}, {"grouper": rng, "placer": rng})
    assert out["grouper"].shape == (graph.num_ops,)
    assert isinstance(out["placer"], Placement) and len(out["placer"]) == graph.num_ops


def test_composite_action_for_shared_parameters():
    space = spaces.composite_action_space({"task0": spaces.IntegerSpace(0, 2), "task1": spaces.IntegerSpace(0, 3)})
    node = TaskNode("shared", lambda x, rng: {"task0": 1, "task1": 2})
    out = execute(add_subtask(TaskGraph(), None, node), {"shared": None})
    assert spaces.validate_value(space, out["shared"]) is None
