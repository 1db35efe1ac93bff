import numpy as np
import pytest

from tasklab.graphs import (CompGraph, DeviceSet, DeviceSpec, GraphError, Op, default_devices, generate_graph,
                            nmt_op_count, op_features, NUM_OP_FEATURES)
from tasklab.simulator import (Placement, PlacementError, critical_path_bound, serial_runtime,
                               simulate_runtime)

from conftest import chain, random_dag


def naive_makespan(graph, placement, devices):
    """Commit, one at a time, the op with the globally earliest feasible start.

    Every device picks the arrived op with the smallest (ready, id); any op
    whose producers are still unscheduled would arrive strictly later than
    the committed start, so it can never be a competitor.
    """
    n = graph.num_ops
    finish = {}
    free = [0.0] * len(devices)
    while len(finish) < n:
        ready = {}
        for i in range(n):
            if i not in finish and all(p in finish for p in graph.producers(i)):
                ready[i] = max((finish[p] + devices.transfer_time(graph.ops[p].output_bytes, placement[p],
                                                                  placement[i])
                                for p in graph.producers(i)), default=0.0)
        best = None
        for d in range(len(devices)):
            mine = [(r, i) for i, r in ready.items() if placement[i] == d]
            if not mine:
                continue
            start = max(free[d], min(mine)[0])
            r, i = min(x for x in mine if x[0] <= start)
            if best is None or start < best[0]:
                best = (start, d, i)
        start, d, i = best
        finish[i] = start + graph.ops[i].compute_cost / devices.devices[d].speed
        free[d] = finish[i]
    return max(finish.values())


def random_devices(rng, nd):
    devs = [DeviceSpec(f"d{i}", float(2 ** int(rng.integers(0, 4))), 1 << 40) for i in range(nd)]
    bw = np.full((nd, nd), float(rng.choice([1000.0, 4096.0, 20000.0])))
    np.fill_diagonal(bw, 0.0)
    return DeviceSet(devs, bw)


def test_oracle_equivalence_random_dags():
    rng = np.random.default_rng(5)
    for _ in range(200):
        g = random_dag(rng)
        devices = random_devices(rng, int(rng.integers(1, 4)))
        pl = Placement(rng.integers(0, len(devices), g.num_ops))
        m = simulate_runtime(g, pl, devices)
        assert m.valid
        assert m.run_time == naive_makespan(g, pl, devices)
        assert m.run_time >= critical_path_bound(g, devices)
        for d in range(len(devices)):
            single = simulate_runtime(g, Placement.single_device(g.num_ops, d), devices).run_time
            assert single == serial_runtime(g, devices.devices[d].speed)


def test_chain_hand_computed():
    g = chain(3, cost=1.0, out_bytes=2000)
    devices = DeviceSet([DeviceSpec("a", 1.0, 10), DeviceSpec("b", 2.0, 10)], [[0, 1000], [1000, 0]])
    # 1 on a, transfer 2 s, 0.5 on b, transfer back 2 s, 1 on a
    assert simulate_runtime(g, Placement([0, 1, 0]), devices).run_time == 6.5
    assert simulate_runtime(g, Placement([1, 1, 1]), devices).run_time == 1.5


def test_parallel_branches_use_both_devices():
    ops = [Op(i, "dense", 1.0, 0, 0) for i in range(3)]
    g = CompGraph(ops, [(0, 2), (1, 2)])
    devices = DeviceSet([DeviceSpec("a", 1.0, 10), DeviceSpec("b", 1.0, 10)], [[0, 1e9], [1e9, 0]])
    assert simulate_runtime(g, Placement([0, 1, 0]), devices).run_time == 2.0
    assert simulate_runtime(g, Placement([0, 0, 0]), devices).run_time == 3.0


def test_memory_invalid_gets_penalty():
    g = chain(2, mem=6)
    devices = DeviceSet([DeviceSpec("a", 1.0, 10), DeviceSpec("b", 1.0, 100)], [[0, 1], [1, 0]])
    m = simulate_runtime(g, Placement([0, 0]), devices)
    assert not m.valid and m.run_time == 100.0 and m.peak_memory == (12, 0)
    assert simulate_runtime(g, Placement([0, 0]), devices, penalty=7.0).run_time == 7.0
    assert simulate_runtime(g, Placement([0, 1]), devices).valid


def test_placement_errors():
    g = chain(2)
    devices = default_devices(1)
    with pytest.raises(PlacementError):
        simulate_runtime(g, Placement([0]), devices)
    with pytest.raises(PlacementError):
        simulate_runtime(g, Placement([0, 2]), devices)
    with pytest.raises(PlacementError):
        Placement({0: 1, 2: 0})
    assert Placement({1: 0, 0: 1}).assignment == (1, 0)


def test_graph_validation():
    with pytest.raises(GraphError):
        CompGraph([Op(0, "dense", 1.0, 0, 0), Op(1, "dense", 1.0, 0, 0)], [(1, 0)])
    with pytest.raises(GraphError):
        CompGraph([Op(1, "dense", 1.0, 0, 0)], [])
    with pytest.raises(GraphError):
        CompGraph([Op(0, "dense", 0.0, 0, 0)], [])
    with pytest.raises(GraphError):
        DeviceSet([DeviceSpec("a", 1.0, 1), DeviceSpec("b", 1.0, 1)], [[0, 1], [2, 0]])


def test_generator_deterministic_and_counts():
    a = generate_graph("nmt-like", {"layers": 2, "unroll_length": 10}, 3)
    b = generate_graph("nmt-like", {"layers": 2, "unroll_length": 10}, 3)
    c = generate_graph("nmt-like", {"layers": 2, "unroll_length": 10}, 4)
    assert a.to_json() == b.to_json() and a.content_hash() != c.content_hash()
    assert a.num_ops == nmt_op_count(2, 10) == 51
    assert CompGraph.from_json(a.to_json()) == a
    for fam in ("cnn-like", "mlp-chain"):
        g = generate_graph(fam, {}, 0)
        assert g.num_ops > 1
    with pytest.raises(GraphError):
        generate_graph("transformer", {}, 0)
    with pytest.raises(GraphError):
        generate_graph("nmt-like", {"layers": 0}, 0)


def test_neighbor_table_padding():
    ops = [Op(i, "dense", 1.0, 10 * (i + 1), 0) for i in range(8)]
    g = CompGraph(ops, [(i, 7) for i in range(7)])
    ins, outs = g.neighbor_table(5)
    assert ins[7].tolist() == [2, 3, 4, 5, 6]  # heaviest producers kept
    assert ins[0].tolist() == [-1] * 5
    assert outs[0].tolist() == [7, -1, -1, -1, -1]


def test_op_features_shape():
    g = generate_graph("nmt-like", {}, 0)
    f = op_features(g)
    assert f.shape == (g.num_ops, NUM_OP_FEATURES)
    assert np.all(np.isfinite(f))


def test_device_set_roundtrip():
    d = default_devices(2, gpu_memory=123)
    assert DeviceSet.from_dict(d.to_dict()) == d
    assert d.names == ("cpu:0", "gpu:0", "gpu:1")
