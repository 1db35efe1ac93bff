"""Deterministic list-scheduling simulation of a placed computation graph."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graphs import CompGraph, DeviceSet

INVALID_PENALTY = 100.0


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class Placement:
    assignment: tuple[int, ...]

    def __init__(self, assignment: Sequence[int] | Mapping[int, int]):
        if isinstance(assignment, Mapping):
            n = len(assignment)
            if sorted(assignment) != list(range(n)):
                raise PlacementError("placement must assign every op id 0..n-1")
            assignment = [assignment[i] for i in range(n)]
        object.__setattr__(self, "assignment", tuple(int(a) for a in assignment))

    def __len__(self) -> int:
        return len(self.assignment)

    def __getitem__(self, i: int) -> int:
        return self.assignment[i]

    @classmethod
    def single_device(cls, num_ops: int, device: int = 0) -> "Placement":
        return cls([device] * num_ops)


@dataclass(frozen=True)
class SimMetrics:
    run_time: float
    valid: bool
    busy_time: tuple[float, ...]
    peak_memory: tuple[int, ...]


def _check(graph: CompGraph, placement: Placement, devices: DeviceSet) -> None:
    if len(placement) != graph.num_ops:
        raise PlacementError(f"placement covers {len(placement)} ops, graph has {graph.num_ops}")
    for i, d in enumerate(placement.assignment):
        if not 0 <= d < len(devices):
            raise PlacementError(f"op {i} placed on unknown device index {d}")


def peak_memory(graph: CompGraph, placement: Placement, num_devices: int) -> tuple[int, ...]:
    mem = [0] * num_devices
    for op in graph.ops:
        mem[placement[op.id]] += op.memory_bytes
    return tuple(mem)


def simulate_runtime(graph: CompGraph, placement: Placement, devices: DeviceSet,
                     penalty: float = INVALID_PENALTY) -> SimMetrics:
    """Makespan of ``placement`` under non-preemptive list scheduling.

    An op is ready once every producer has finished and its output has
    crossed to the op's device.  Each device runs one op at a time, picking
    among ready ops by (ready time, op id).  Placements exceeding any
    device's memory capacity are invalid and cost ``penalty``.
    """
    _check(graph, placement, devices)
    nd = len(devices)
    mem = peak_memory(graph, placement, nd)
    if any(m > d.memory_capacity for m, d in zip(mem, devices.devices)):
        return SimMetrics(float(penalty), False, (0.0,) * nd, mem)

    n = graph.num_ops
    speed = [d.speed for d in devices.devices]
    pending = [len(graph.producers(i)) for i in range(n)]
    ready_at = [0.0] * n
    finish = [0.0] * n
    busy = [0.0] * nd
    free_at = [0.0] * nd
    idle = [True] * nd
    queues: list[list] = [[] for _ in range(nd)]  # (ready, id) of ops already arrived
    arrivals: list = []  # (ready, id) not yet arrived
    events: list = []  # (finish, id)

    for i in range(n):
        if pending[i] == 0:
            heapq.heappush(arrivals, (0.0, i))

    t = 0.0
    done = 0
    while done < n:
        while arrivals and arrivals[0][0] <= t:
            r, i = heapq.heappop(arrivals)
            heapq.heappush(queues[placement[i]], (r, i))
        for d in range(nd):
            if idle[d] and queues[d]:
                r, i = heapq.heappop(queues[d])
                dur = graph.ops[i].compute_cost / speed[d]
                finish[i] = t + dur
                busy[d] += dur
                idle[d] = False
                heapq.heappush(events, (finish[i], i))
        candidates = []
        if events:
            candidates.append(events[0][0])
        if arrivals:
            candidates.append(arrivals[0][0])
        t = min(candidates)
        while events and events[0][0] <= t:
            f, i = heapq.heappop(events)
            d = placement[i]
            idle[d] = True
            free_at[d] = f
            done += 1
            for c in graph.consumers(i):
                pending[c] -= 1
                if pending[c] == 0:
                    dc = placement[c]
                    ready_at[c] = max(
                        finish[p] + devices.transfer_time(graph.ops[p].output_bytes, placement[p], dc)
                        for p in graph.producers(c)
                    )
                    heapq.heappush(arrivals, (ready_at[c], c))
    return SimMetrics(max(finish), True, tuple(busy), mem)


def serial_runtime(graph: CompGraph, speed: float) -> float:
    total = 0.0
    for op in graph.ops:
        total += op.compute_cost / speed
    return total


def critical_path_bound(graph: CompGraph, devices: DeviceSet) -> float:
    """Longest compute-only path, every op on the fastest device."""
    fastest = max(d.speed for d in devices.devices)
    longest = np.zeros(graph.num_ops)
    for b in range(graph.num_ops):
        start = max((longest[a] for a in graph.producers(b)), default=0.0)
        longest[b] = start + graph.ops[b].compute_cost / fastest
    return float(longest.max()) if graph.num_ops else 0.0


def improvement(initial_run_time: float, run_time: float) -> float:
    return (initial_run_time - run_time) / initial_run_time
