"""Adapters between the system view of placement and the agent view."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from . import spaces
from .simulator import INVALID_PENALTY


class ConversionError(ValueError):
    pass


@dataclass(frozen=True)
class SystemState:
    """Graph traversal state: ops with index below ``current_op_index`` are placed.

    ``comp_graph`` only needs ``num_ops`` and ``neighbor_table``, so a
    grouped view of a graph works as well as the op-level graph.
    """

    comp_graph: Any
    current_op_index: int
    partial_placement: Mapping[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class SystemMetrics:
    run_time: float
    valid: bool = True
    peak_memory_per_device: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class RewardTransform:
    """``scale * reward + shift``; the identity unless configured."""

    scale: float = 1.0
    shift: float = 0.0

    def __call__(self, r: float) -> float:
        return self.scale * r + self.shift


class PlacementConverter:
    def __init__(self, schema: spaces.SchemaLayout, penalty: float = INVALID_PENALTY,
                 reward_transform: RewardTransform | None = None):
        self.schema = schema
        self.penalty = float(penalty)
        self.reward_transform = reward_transform or RewardTransform()
        self.device_name_to_index = {name: i for i, name in enumerate(schema.devices)}
        self.index_to_device_name = dict(enumerate(schema.devices))
        self._neighbors: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _neighbor_table(self, graph):
        key = id(graph)
        cached = self._neighbors.get(key)
        if cached is None or cached[0] is not graph:
            table = graph.neighbor_table(self.schema.max_neighbors)
            cached = (graph, table)
            self._neighbors = {key: cached}
        return cached[1]

    def system_to_agent_state(self, state: SystemState):
        graph = state.comp_graph
        n = self.schema.num_ops
        if graph.num_ops != n:
            raise ConversionError(f"graph has {graph.num_ops} ops, schema expects {n}")
        cur = int(state.current_op_index)
        if not 0 <= cur < n:
            raise ConversionError(f"current op index {cur} outside [0, {n})")
        nd = self.schema.num_devices
        device_block = np.zeros((n, nd))
        for op, dev in state.partial_placement.items():
            if not 0 <= dev < nd:
                raise ConversionError(f"op {op} placed on unknown device index {dev}")
            device_block[op, dev] = 1.0
        if self.schema.variant == spaces.RECURRENT:
            return device_block
        ids = np.arange(n)
        flags = np.stack([(ids == cur).astype(float), (ids < cur).astype(float)], axis=1)
        ins, outs = self._neighbor_table(graph)
        return {
            "embeddings": np.concatenate([flags, device_block], axis=1),
            "current_node_num": cur,
            "in_neighbors": ins.copy(),
            "out_neighbors": outs.copy(),
        }

    def system_to_agent_action(self, device_name: str) -> int:
        try:
            return self.device_name_to_index[device_name]
        except KeyError:
            raise ConversionError(f"unknown device {device_name!r}") from None

    def agent_to_system_action(self, action) -> str:
        if isinstance(action, (bool, np.bool_)) or int(action) != action:
            raise ConversionError(f"action {action!r} is not an integer")
        try:
            return self.index_to_device_name[int(action)]
        except KeyError:
            raise ConversionError(
                f"action {action} outside output space [0, {self.schema.num_devices})") from None

    def system_to_agent_reward(self, metrics: SystemMetrics | Mapping) -> float:
        if isinstance(metrics, Mapping):
            run_time, valid = metrics["run_time"], metrics.get("valid", True)
        else:
            run_time, valid = metrics.run_time, metrics.valid
        if not valid:
            run_time = self.penalty
        return self.reward_transform(-float(run_time))
