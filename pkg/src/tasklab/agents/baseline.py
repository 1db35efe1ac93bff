from __future__ import annotations

import itertools

import numpy as np

from ..graphs import CompGraph, DeviceSet
from ..simulator import INVALID_PENALTY, Placement, SimMetrics, simulate_runtime


def random_search_baseline(graph: CompGraph, devices: DeviceSet, budget: int,
                           rng: np.random.Generator | None = None, exhaustive: bool = False,
                           penalty: float = INVALID_PENALTY) -> tuple[Placement, SimMetrics, int]:
    """Best of ``budget`` placements -> (placement, metrics, simulations run).

    Draws uniform op-level placements; with ``exhaustive`` it enumerates
    placements in lexicographic order instead, stopping after ``budget``.
    Ties keep the earliest placement found.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n, nd = graph.num_ops, len(devices)
    if exhaustive:
        candidates = itertools.islice(itertools.product(range(nd), repeat=n), budget)
    else:
        if rng is None:
            raise ValueError("random search needs a random stream")
        candidates = (rng.integers(0, nd, size=n) for _ in range(budget))
    best = None
    count = 0
    for assignment in candidates:
        p = Placement(assignment)
        m = simulate_runtime(graph, p, devices, penalty)
        count += 1
        if best is None or m.run_time < best[1].run_time:
            best = (p, m)
    return best[0], best[1], count


def random_search_curve(graph: CompGraph, devices: DeviceSet, budget: int, rng: np.random.Generator,
                        penalty: float = INVALID_PENALTY) -> np.ndarray:
    """Run time of each uniform draw, in order; prefix minima give best-so-far curves."""
    n, nd = graph.num_ops, len(devices)
    return np.array([
        simulate_runtime(graph, Placement(rng.integers(0, nd, size=n)), devices, penalty).run_time
        for _ in range(budget)
    ])
