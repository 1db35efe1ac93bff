"""Workload instances and the incremental group-placement environment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .converter import PlacementConverter, SystemMetrics, SystemState
from .graphs import CompGraph, DeviceSet, GraphError, check_params, generate_graph
from .simulator import Placement, SimMetrics, simulate_runtime

WORKLOAD_MODES = (
    "fixed-blackbox",
    "randomized-blackbox",
    "fixed-in-dist",
    "randomized-in-dist",
    "fixed-out-of-dist",
    "randomized-out-of-dist",
)
INCREMENTAL = "incremental"
TERMINAL = "terminal"


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistributionSpec:
    """Where instances come from: a base configuration plus sampling ranges."""

    family: str = "nmt-like"
    base_params: dict = field(default_factory=dict, hash=False)
    batch_range: tuple[int, int] = (32, 256)
    unroll_range: tuple[int, int] = (6, 14)
    held_out_family: str | None = None
    pinned_seed: int = 1234

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "base_params": dict(sorted(self.base_params.items())),
            "batch_range": list(self.batch_range),
            "unroll_range": list(self.unroll_range),
            "held_out_family": self.held_out_family,
            "pinned_seed": self.pinned_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        return cls(
            family=d.get("family", "nmt-like"),
            base_params=dict(d.get("base_params", {})),
            batch_range=tuple(d.get("batch_range", (32, 256))),
            unroll_range=tuple(d.get("unroll_range", (6, 14))),
            held_out_family=d.get("held_out_family"),
            pinned_seed=int(d.get("pinned_seed", 1234)),
        )


@dataclass(frozen=True)
class TaskInstance:
    comp_graph: CompGraph
    family: str
    params: dict = field(hash=False)
    seed: int
    mode: str = "fixed-blackbox"

    @property
    def content_hash(self) -> str:
        return self.comp_graph.content_hash()

    def provenance(self) -> dict:
        return {"family": self.family, "params": dict(sorted(self.params.items())), "seed": self.seed}

    @classmethod
    def from_provenance(cls, prov: dict, mode: str = "fixed-blackbox") -> "TaskInstance":
        return make_instance(prov["family"], prov["params"], int(prov["seed"]), mode)


def make_instance(family: str, params: dict, seed: int, mode: str = "fixed-blackbox") -> TaskInstance:
    full = check_params(family, params)
    graph = generate_graph(family, full, np.random.default_rng(seed))
    return TaskInstance(graph, family, full, int(seed), mode)


def sample_instance(mode: str, dist: DistributionSpec, rng: np.random.Generator | None = None) -> TaskInstance:
    """Draw a workload instance for one of the six workload modes.

    Fixed modes ignore ``rng`` and rebuild the instance from the pinned seed;
    randomized modes draw batch size, unroll length and generator seed from
    ``rng``.  Out-of-distribution modes switch to the held-out family.
    """
    if mode not in WORKLOAD_MODES:
        raise EnvError(f"unknown workload mode {mode!r}")
    family = dist.family
    if mode.endswith("out-of-dist"):
        if dist.held_out_family is None:
            raise EnvError(f"{mode} requested but no held-out family is configured")
        family = dist.held_out_family
        if family == dist.family:
            raise EnvError("held-out family must differ from the training family")
    params = dict(dist.base_params)
    if mode.startswith("fixed"):
        return make_instance(family, params, dist.pinned_seed, mode)
    if rng is None:
        raise EnvError(f"{mode} needs a workload random stream")
    lo, hi = dist.batch_range
    params["batch_size"] = int(rng.integers(lo, hi + 1))
    lo, hi = dist.unroll_range
    params["unroll_length"] = int(rng.integers(lo, hi + 1))
    seed = int(rng.integers(0, 2**63 - 1))
    try:
        return make_instance(family, params, seed, mode)
    except GraphError as e:
        raise EnvError(f"distribution produced invalid parameters: {e}") from e


class GroupedGraph:
    """Quotient of a graph under an op -> group assignment.

    Groups may form cycles even though the op graph is acyclic; only
    neighbourhoods are exposed, never a schedule.
    """

    def __init__(self, graph: CompGraph, groups, num_groups: int):
        groups = np.asarray(groups, dtype=np.int64)
        if groups.shape != (graph.num_ops,):
            raise EnvError(f"grouping covers {groups.shape} ops, graph has {graph.num_ops}")
        if groups.size and (groups.min() < 0 or groups.max() >= num_groups):
            raise EnvError("group index out of range")
        self.graph = graph
        self.groups = groups
        self.num_groups = num_groups
        traffic = np.zeros((num_groups, num_groups))
        for a, b in graph.edges:
            ga, gb = groups[a], groups[b]
            if ga != gb:
                traffic[ga, gb] += graph.ops[a].output_bytes
        self.traffic = traffic
        self.members = [np.flatnonzero(groups == g) for g in range(num_groups)]
        mem = np.array([o.memory_bytes for o in graph.ops], dtype=float)
        # Empty groups hold no ops, so only these are ever placed.
        self.active = tuple(g for g in range(num_groups) if self.members[g].size)
        self.memory = np.bincount(groups, weights=mem, minlength=num_groups) if groups.size else np.zeros(num_groups)

    @property
    def num_ops(self) -> int:
        return self.num_groups

    def neighbor_table(self, max_neighbors: int) -> tuple[np.ndarray, np.ndarray]:
        """Up to ``max_neighbors`` producer/consumer groups by traffic, ascending, -1 padded."""
        n = self.num_groups
        ins = np.full((n, max_neighbors), -1, dtype=np.int64)
        outs = np.full((n, max_neighbors), -1, dtype=np.int64)
        for g in range(n):
            for table, row in ((ins, self.traffic[:, g]), (outs, self.traffic[g, :])):
                nz = np.flatnonzero(row)
                keep = sorted(nz, key=lambda j: (-row[j], j))[:max_neighbors]
                table[g, :len(keep)] = sorted(keep)
        return ins, outs

    def group_features(self, op_feats: np.ndarray) -> np.ndarray:
        """Mean member features plus member cost and output-byte shares; zeros for empty groups."""
        graph = self.graph
        cost = np.array([o.compute_cost for o in graph.ops])
        out_b = np.array([o.output_bytes for o in graph.ops], dtype=float)
        feats = np.zeros((self.num_groups, op_feats.shape[1] + 3))
        for g, m in enumerate(self.members):
            if m.size == 0:
                continue
            feats[g, :op_feats.shape[1]] = op_feats[m].mean(axis=0)
            feats[g, -3] = cost[m].sum() / cost.sum()
            feats[g, -2] = out_b[m].sum() / max(out_b.sum(), 1.0)
            feats[g, -1] = m.size / graph.num_ops
        return feats

    def op_placement(self, group_devices, default: int = 0) -> Placement:
        dev = np.full(self.num_groups, default, dtype=np.int64)
        for g, d in (group_devices.items() if isinstance(group_devices, dict) else enumerate(group_devices)):
            dev[g] = d
        return Placement(dev[self.groups])


class PlacementEnv:
    """Places groups ``groups_per_step`` at a time, simulating after every step.

    Only non-empty groups are placed, in id order.  Groups not yet placed
    stay on device 0, the initial single-device placement.  ``incremental`` rewards are the converter-reward difference
    between consecutive evaluations; ``terminal`` pays the converter reward
    of the final placement only.
    """

    def __init__(self, instance: TaskInstance, devices: DeviceSet, converter: PlacementConverter,
                 groups_per_step: int = 10, reward_mode: str = INCREMENTAL,
                 noise_sigma: float = 0.0, noise_rng: np.random.Generator | None = None):
        if reward_mode not in (INCREMENTAL, TERMINAL):
            raise EnvError(f"unknown reward mode {reward_mode!r}")
        if groups_per_step < 1:
            raise EnvError("groups_per_step must be >= 1")
        if noise_sigma > 0 and noise_rng is None:
            raise EnvError("measurement noise needs a random stream")
        self.instance = instance
        self.devices = devices
        self.converter = converter
        self.groups_per_step = groups_per_step
        self.reward_mode = reward_mode
        self.noise_sigma = noise_sigma
        self.noise_rng = noise_rng
        self.initial_metrics = simulate_runtime(
            instance.comp_graph, Placement.single_device(instance.comp_graph.num_ops), devices,
            converter.penalty)
        self.evaluations = 0
        self.transitions = 0
        self.grouped: GroupedGraph | None = None
        self._done = True

    @property
    def initial_run_time(self) -> float:
        return self.initial_metrics.run_time

    def reset(self, groups=None, num_groups: int | None = None) -> SystemState:
        graph = self.instance.comp_graph
        if groups is None:
            groups = np.arange(graph.num_ops)
            num_groups = graph.num_ops
        self.grouped = GroupedGraph(graph, groups, num_groups or int(np.max(groups)) + 1)
        self.placement: dict[int, int] = {}
        self.position = 0
        self.last_metrics = self.initial_metrics
        self.last_measured = self.initial_metrics.run_time
        self._done = False
        return self.state

    @property
    def cursor(self) -> int:
        """Id of the next group to place; ``num_groups`` once all are placed."""
        order = self.grouped.active
        return order[self.position] if self.position < len(order) else self.grouped.num_groups

    def next_groups(self) -> tuple[int, ...]:
        """Groups the next ``step`` call places, in order."""
        return self.grouped.active[self.position:self.position + self.groups_per_step]

    @property
    def state(self) -> SystemState:
        cur = min(self.cursor, self.grouped.num_groups - 1)
        return SystemState(self.grouped, cur, dict(self.placement))

    @property
    def done(self) -> bool:
        return self._done

    def _measure(self, metrics: SimMetrics) -> float:
        if not metrics.valid or self.noise_sigma <= 0:
            return metrics.run_time
        return metrics.run_time * (1.0 + self.noise_sigma * self.noise_rng.standard_normal())

    def step(self, decisions) -> tuple[SystemState, float, bool]:
        if self._done:
            raise EnvError("step called on a finished episode; call reset first")
        decisions = [int(d) for d in decisions]
        targets = self.next_groups()
        if len(decisions) != len(targets):
            raise EnvError(f"expected {len(targets)} decisions, got {len(decisions)}")
        for g, d in zip(targets, decisions):
            if not 0 <= d < len(self.devices):
                raise EnvError(f"device index {d} out of range")
            self.placement[g] = d
        self.position += len(targets)
        metrics = simulate_runtime(self.instance.comp_graph, self.grouped.op_placement(self.placement),
                                   self.devices, self.converter.penalty)
        measured = self._measure(metrics)
        self.evaluations += 1
        self.transitions += 1
        self._done = self.position >= len(self.grouped.active)
        to_reward = self.converter.system_to_agent_reward
        new = to_reward(SystemMetrics(measured, metrics.valid))
        if self.reward_mode == INCREMENTAL:
            reward = new - to_reward(SystemMetrics(self.last_measured, self.last_metrics.valid))
        else:
            reward = new if self._done else 0.0
        self.last_metrics = metrics
        self.last_measured = measured
        return self.state, reward, self._done

    def current_placement(self) -> Placement:
        return self.grouped.op_placement(self.placement)
