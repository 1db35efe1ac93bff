"""Grouper/placer pair: the grouper maps ops to groups, the placer maps groups to devices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import spaces
from ..converter import PlacementConverter, SystemState
from ..env import GroupedGraph
from ..graphs import NUM_OP_FEATURES, CompGraph, DeviceSet, op_features
from ..simulator import Placement
from . import nets
from .ppo import AgentConfig, Network, PPOAgent

GROUPER_NET = Network(nets.grouper_forward, nets.grouper_backward)


def placer_net(rounds: int) -> Network:
    return Network(
        lambda inp, params: nets.placer_forward(inp, params, rounds),
        nets.placer_backward,
        lambda inp, idx: inp.take(idx),
    )


class _GroupSlots:
    """Stand-in graph so the placer schema can be built before any grouping exists."""

    def __init__(self, n: int):
        self.num_ops = n


def group_feature_dim() -> int:
    return NUM_OP_FEATURES + 3


def occupancy_features(group_memory: np.ndarray, partial: dict[int, int], current: int,
                       capacity: np.ndarray) -> np.ndarray:
    """Per-device memory fill before and after adding the current group.

    Returns ``2 * num_devices`` values, clipped to 2 so an overflowing
    device stays on the same scale as a nearly full one.
    """
    used = np.zeros(len(capacity))
    for g, d in partial.items():
        used[d] += group_memory[g]
    after = used + group_memory[current]
    return np.minimum(np.concatenate([used / capacity, after / capacity]), 2.0)


@dataclass
class PlacerStep:
    inputs: nets.PlacerInput
    action: int
    log_prob: float
    value: float


class HierarchicalPlacer:
    def __init__(self, grouper_cfg: AgentConfig, placer_cfg: AgentConfig, device_names,
                 init_rng: np.random.Generator | None = None):
        self.device_names = tuple(device_names)
        self.num_groups = grouper_cfg.num_groups
        if placer_cfg.num_groups != self.num_groups:
            raise ValueError("grouper and placer disagree on num_groups")
        self.schema = spaces.build_placement_schema(
            spaces.DeploymentParams(self.device_names, _GroupSlots(self.num_groups), placer_cfg.num_neighbors),
            spaces.GRAPH,
        )
        self.converter = PlacementConverter(self.schema)
        nd = len(self.device_names)
        width = placer_cfg.layer_size or self.num_groups
        g_layout = nets.grouper_layout(NUM_OP_FEATURES, self.num_groups, grouper_cfg.layer_size, grouper_cfg.num_layers)
        p_in = len(self.schema.node_options) + nd + group_feature_dim() + 2 * nd
        p_layout = nets.placer_layout(p_in, nd, width)
        g_params = nets.PolicyParams(g_layout)
        p_params = nets.PolicyParams(p_layout)
        if init_rng is not None:
            g_params = g_params.init_uniform(init_rng)
            p_params = p_params.init_uniform(init_rng)
        self.grouper = PPOAgent(grouper_cfg, g_params, GROUPER_NET)
        self.placer = PPOAgent(placer_cfg, p_params, placer_net(placer_cfg.aggregation_rounds))

    # --------------------------------------------------------- acting

    def group(self, op_feats: np.ndarray, rng=None, greedy: bool = False):
        return self.grouper.act(op_feats, rng, greedy)

    def placer_input(self, grouped: GroupedGraph, group_feats: np.ndarray, cursor: int,
                     partial: dict[int, int], capacity: np.ndarray) -> nets.PlacerInput:
        """Converted state plus static group features and the (global) memory fill."""
        state = self.converter.system_to_agent_state(SystemState(grouped, cursor, partial))
        occ = occupancy_features(grouped.memory, partial, cursor, capacity)
        extra = np.concatenate([group_feats, np.broadcast_to(occ, (len(group_feats), len(occ)))], axis=1)
        return nets.placer_input(state, extra)

    def place_groups(self, grouped: GroupedGraph, group_feats: np.ndarray, group_ids,
                     partial: dict[int, int], devices: DeviceSet, rng=None,
                     greedy: bool = False) -> list[PlacerStep]:
        """Sequentially choose devices for ``group_ids`` given an existing partial placement."""
        self.check_devices(devices)
        capacity = np.array([d.memory_capacity for d in devices.devices], dtype=float)
        partial = dict(partial)
        steps = []
        for g in group_ids:
            inp = self.placer_input(grouped, group_feats, g, partial, capacity)
            a, logp, v = self.placer.act(inp, rng, greedy)
            partial[g] = int(a[0])
            steps.append(PlacerStep(inp, int(a[0]), float(logp[0]), float(v[0])))
        return steps

    def greedy_placement(self, graph: CompGraph, devices: DeviceSet) -> Placement:
        feats = op_features(graph, self.schema.max_neighbors)
        groups, _, _ = self.group(feats, greedy=True)
        grouped = GroupedGraph(graph, groups, self.num_groups)
        steps = self.place_groups(grouped, grouped.group_features(feats), grouped.active, {}, devices,
                                  greedy=True)
        return grouped.op_placement(dict(zip(grouped.active, (s.action for s in steps))))

    # -------------------------------------------------- serialisation

    def to_dict(self) -> dict:
        return {
            "devices": list(self.device_names),
            "grouper": {"config": self.grouper.config.to_dict(), "params": self.grouper.params.to_dict(),
                        "updates": self.grouper.updates},
            "placer": {"config": self.placer.config.to_dict(), "params": self.placer.params.to_dict(),
                       "updates": self.placer.updates},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchicalPlacer":
        model = cls(AgentConfig.from_dict(d["grouper"]["config"]), AgentConfig.from_dict(d["placer"]["config"]),
                    d["devices"])
        for agent, key in ((model.grouper, "grouper"), (model.placer, "placer")):
            params = nets.PolicyParams.from_dict(d[key]["params"])
            if params.layout != agent.params.layout:
                raise ValueError(f"{key} checkpoint layout does not match its config")
            agent.params = params
            agent.updates = int(d[key]["updates"])
        return model

    def check_devices(self, devices: DeviceSet) -> None:
        if tuple(devices.names) != self.device_names:
            raise ValueError(f"model trained for devices {self.device_names}, got {devices.names}")
