"""Synthetic computation graphs and device descriptions for the placement task."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("nmt-like", "cnn-like", "mlp-chain")
OP_KINDS = ("lstm_cell", "attention", "loss", "input", "conv", "concat", "dense")

# Work units per (sample x hidden unit); all-CPU runtime of the default
# 2-layer, 10-step nmt-like graph lands around 10 simulated seconds.
COST_UNIT = 1.0 / 20000.0
COST_FACTOR = {
    "lstm_cell": 1.0,
    "attention": 0.5,
    "loss": 2.0,
    "input": 0.25,
    "conv": 1.5,
    "concat": 0.1,
    "dense": 1.0,
}
BYTES_PER_VALUE = 4
MEMORY_FACTOR = 6  # resident activations per output value
COST_JITTER = 0.1

PARAM_RANGES = {
    "unroll_length": (2, 64),
    "batch_size": (16, 512),
    "layers": (1, 8),
    "hidden_size": (8, 1024),
}
DEFAULT_PARAMS = {"batch_size": 64, "unroll_length": 10, "layers": 2, "hidden_size": 64}


COST_GRID = 2.0 ** -32


class GraphError(ValueError):
    pass


def snap_cost(c: float) -> float:
    """Round a cost onto a dyadic grid so serial sums are exact in any order."""
    return max(round(c / COST_GRID), 1) * COST_GRID


@dataclass(frozen=True)
class Op:
    id: int
    kind: str
    compute_cost: float
    output_bytes: int
    memory_bytes: int


@dataclass(frozen=True)
class CompGraph:
    ops: tuple[Op, ...]
    edges: tuple[tuple[int, int], ...]
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(
            o if o.compute_cost <= 0 or snap_cost(o.compute_cost) == o.compute_cost
            else Op(o.id, o.kind, snap_cost(o.compute_cost), o.output_bytes, o.memory_bytes)
            for o in self.ops))
        object.__setattr__(self, "edges", tuple(sorted(set((int(a), int(b)) for a, b in self.edges))))
        n = len(self.ops)
        for i, op in enumerate(self.ops):
            if op.id != i:
                raise GraphError(f"op ids must be 0..n-1 in order; position {i} has id {op.id}")
            if not op.compute_cost > 0:
                raise GraphError(f"op {i} has non-positive compute cost")
            if op.output_bytes < 0 or op.memory_bytes < 0:
                raise GraphError(f"op {i} has negative byte counts")
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) references a missing op")
            if not a < b:
                raise GraphError(f"edge ({a}, {b}) violates topological id order")
        producers = [[] for _ in range(n)]
        consumers = [[] for _ in range(n)]
        for a, b in self.edges:
            producers[b].append(a)
            consumers[a].append(b)
        object.__setattr__(self, "_producers", tuple(tuple(p) for p in producers))
        object.__setattr__(self, "_consumers", tuple(tuple(c) for c in consumers))

    @property
    def num_ops(self) -> int:
        return len(self.ops)

    def producers(self, i: int) -> tuple[int, ...]:
        return self._producers[i]

    def consumers(self, i: int) -> tuple[int, ...]:
        return self._consumers[i]

    def neighbor_table(self, max_neighbors: int) -> tuple[np.ndarray, np.ndarray]:
        """In/out neighbour ids per op, ascending, padded with -1.

        When an op has more than ``max_neighbors`` neighbours, the ones
        exchanging the most bytes are kept (ties to the lower id).
        """
        n = self.num_ops
        ins = np.full((n, max_neighbors), -1, dtype=np.int64)
        outs = np.full((n, max_neighbors), -1, dtype=np.int64)
        for i in range(n):
            p = sorted(self._producers[i], key=lambda j: (-self.ops[j].output_bytes, j))[:max_neighbors]
            c = list(self._consumers[i])[:max_neighbors]  # every out-edge carries op i's output
            ins[i, :len(p)] = sorted(p)
            outs[i, :len(c)] = c
        return ins, outs

    def depths(self) -> np.ndarray:
        d = np.zeros(self.num_ops)
        for b in range(self.num_ops):
            for a in self._producers[b]:
                d[b] = max(d[b], d[a] + 1)
        return d

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": dict(sorted(self.params.items())),
            "ops": [[o.id, o.kind, o.compute_cost, o.output_bytes, o.memory_bytes] for o in self.ops],
            "edges": [list(e) for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "CompGraph":
        ops = [Op(int(i), str(k), float(c), int(ob), int(mb)) for i, k, c, ob, mb in d["ops"]]
        return cls(ops, [tuple(e) for e in d["edges"]], d.get("family", "custom"), dict(d.get("params", {})))

    @classmethod
    def from_json(cls, s: str) -> "CompGraph":
        return cls.from_dict(json.loads(s))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


POSITION_FREQUENCIES = (1, 2, 3)


def op_features(graph: CompGraph, max_neighbors: int = 5) -> np.ndarray:
    """Static per-op features: kind one-hot, position and depth (raw and as sin/cos
    waves), normalised costs, degrees."""
    n = graph.num_ops
    kinds = np.zeros((n, len(OP_KINDS)))
    for op in graph.ops:
        kinds[op.id, OP_KINDS.index(op.kind)] = 1.0
    cost = np.array([o.compute_cost for o in graph.ops])
    out_b = np.array([o.output_bytes for o in graph.ops], dtype=float)
    mem = np.array([o.memory_bytes for o in graph.ops], dtype=float)
    depth = graph.depths()
    pos = np.arange(n) / max(n - 1, 1)
    indeg = np.array([len(graph.producers(i)) for i in range(n)], dtype=float)
    outdeg = np.array([len(graph.consumers(i)) for i in range(n)], dtype=float)
    rel_depth = depth / max(depth.max(), 1.0)
    waves = [f(np.pi * k * x) for x in (pos, rel_depth) for k in POSITION_FREQUENCIES for f in (np.sin, np.cos)]
    cols = waves + [
        pos,
        rel_depth,
        cost / cost.max(),
        out_b / max(out_b.max(), 1.0),
        mem / max(mem.max(), 1.0),
        np.minimum(indeg, max_neighbors) / max_neighbors,
        np.minimum(outdeg, max_neighbors) / max_neighbors,
    ]
    return np.concatenate([kinds, np.stack(cols, axis=1)], axis=1)


NUM_OP_FEATURES = len(OP_KINDS) + 7 + 4 * len(POSITION_FREQUENCIES)


def check_params(family: str, params: dict) -> dict:
    if family not in FAMILIES:
        raise GraphError(f"unknown graph family {family!r}; expected one of {FAMILIES}")
    full = dict(DEFAULT_PARAMS)
    full.update(params)
    unknown = set(full) - set(PARAM_RANGES)
    if unknown:
        raise GraphError(f"unknown graph parameters: {sorted(unknown)}")
    for key, (lo, hi) in PARAM_RANGES.items():
        v = full[key]
        if int(v) != v or not lo <= v <= hi:
            raise GraphError(f"{key}={v} outside [{lo}, {hi}]")
        full[key] = int(v)
    return full


class _Builder:
    def __init__(self, batch: int, hidden: int, rng: np.random.Generator):
        self.batch, self.hidden, self.rng = batch, hidden, rng
        self.ops: list[Op] = []
        self.edges: list[tuple[int, int]] = []

    def add(self, kind: str, inputs=()) -> int:
        i = len(self.ops)
        jitter = 1.0 + COST_JITTER * (2.0 * self.rng.random() - 1.0)
        width = self.batch * self.hidden
        self.ops.append(Op(
            id=i,
            kind=kind,
            compute_cost=COST_FACTOR[kind] * width * COST_UNIT * jitter,
            output_bytes=BYTES_PER_VALUE * width,
            memory_bytes=MEMORY_FACTOR * BYTES_PER_VALUE * width,
        ))
        self.edges.extend((j, i) for j in inputs)
        return i


def nmt_op_count(layers: int, unroll: int) -> int:
    return 2 * unroll * layers + unroll + 1


def generate_graph(family: str, params: dict, rng: np.random.Generator | int) -> CompGraph:
    """Build a graph of ``family``; deterministic in (family, params, seed).

    Costs carry a small per-op jitter drawn from ``rng`` so that two
    instances with equal structural parameters still differ.
    """
    p = check_params(family, params)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    b = _Builder(p["batch_size"], p["hidden_size"], rng)
    L, U = p["layers"], p["unroll_length"]
    if family == "nmt-like":
        enc = [[0] * L for _ in range(U)]
        for t in range(U):
            for layer in range(L):
                ins = []
                if t > 0:
                    ins.append(enc[t - 1][layer])
                if layer > 0:
                    ins.append(enc[t][layer - 1])
                enc[t][layer] = b.add("lstm_cell", ins)
        dec = [[0] * L for _ in range(U)]
        attn = []
        for t in range(U):
            for layer in range(L):
                ins = [dec[t - 1][layer] if t > 0 else enc[U - 1][layer]]
                if layer > 0:
                    ins.append(dec[t][layer - 1])
                dec[t][layer] = b.add("lstm_cell", ins)
            attn.append(b.add("attention", [dec[t][L - 1]] + [enc[s][L - 1] for s in range(U)]))
        b.add("loss", attn)
    elif family == "cnn-like":
        prev = b.add("input")
        for _ in range(L):
            a = b.add("conv", [prev])
            c = b.add("conv", [prev])
            prev = b.add("concat", [a, c])
        d = b.add("dense", [prev])
        b.add("loss", [d])
    else:
        prev = None
        for _ in range(L):
            prev = b.add("dense", [] if prev is None else [prev])
    return CompGraph(b.ops, b.edges, family, p)


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    speed: float
    memory_capacity: int


@dataclass(frozen=True)
class DeviceSet:
    """Devices plus a symmetric bandwidth matrix (bytes per second)."""

    devices: tuple[DeviceSpec, ...]
    bandwidth: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        bw = np.asarray(self.bandwidth, dtype=float)
        n = len(self.devices)
        if n == 0:
            raise GraphError("device set is empty")
        if bw.shape != (n, n):
            raise GraphError(f"bandwidth matrix must be {n}x{n}")
        off = ~np.eye(n, dtype=bool)
        if np.any(bw[off] <= 0) or not np.array_equal(bw, bw.T):
            raise GraphError("bandwidth must be symmetric and positive")
        for d in self.devices:
            if not d.speed > 0:
                raise GraphError(f"device {d.name} has non-positive speed")
        bw = bw.copy()
        np.fill_diagonal(bw, np.inf)
        object.__setattr__(self, "bandwidth", tuple(tuple(r) for r in bw))
        object.__setattr__(self, "_bw", bw)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.devices)

    def __len__(self) -> int:
        return len(self.devices)

    def transfer_time(self, nbytes: int, src: int, dst: int) -> float:
        if src == dst:
            return 0.0
        return nbytes / self._bw[src, dst]

    def to_dict(self) -> dict:
        bw = [[None if np.isinf(x) else x for x in row] for row in self.bandwidth]
        return {
            "devices": [{"name": d.name, "speed": d.speed, "memory_capacity": d.memory_capacity} for d in self.devices],
            "bandwidth": bw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceSet":
        devs = [DeviceSpec(x["name"], float(x["speed"]), int(x["memory_capacity"])) for x in d["devices"]]
        bw = [[0.0 if x is None else float(x) for x in row] for row in d["bandwidth"]]
        for i in range(len(bw)):
            bw[i][i] = 0.0
        return cls(devs, bw)


CPU_SPEED = 1.0
GPU_SPEED = 8.0
CPU_MEMORY = 1 << 40
GPU_MEMORY = 3_500_000
DEFAULT_BANDWIDTH = 20_000.0


def default_devices(num_gpus: int = 4, *, gpu_memory: int = GPU_MEMORY,
                    bandwidth: float = DEFAULT_BANDWIDTH) -> DeviceSet:
    """One slow CPU with ample memory plus ``num_gpus`` fast, memory-limited GPUs."""
    devs = [DeviceSpec("cpu:0", CPU_SPEED, CPU_MEMORY)]
    devs += [DeviceSpec(f"gpu:{i}", GPU_SPEED, gpu_memory) for i in range(num_gpus)]
    n = len(devs)
    bw = [[0.0 if i == j else bandwidth for j in range(n)] for i in range(n)]
    return DeviceSet(devs, bw)
