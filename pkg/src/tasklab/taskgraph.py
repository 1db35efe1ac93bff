"""Routing of inputs and outputs through a DAG of sub-tasks.

A node's policy is any callable ``policy(x, rng) -> y``.  Graphs are
immutable: ``add_subtask`` and ``add_edge`` return new graphs.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Callable, Mapping

import numpy as np


class TaskGraphError(ValueError):
    pass


class CycleError(TaskGraphError):
    """Raised for cyclic graphs; ``cycle`` lists the node names along one cycle."""

    def __init__(self, cycle: list[str]):
        super().__init__(f"task graph has a cycle: {' -> '.join(cycle + cycle[:1])}")
        self.cycle = cycle


def _identity(x):
    return x


@dataclass(frozen=True)
class TaskNode:
    name: str
    policy: Callable[[Any, Any], Any]
    kind: str = "external"
    pre_transform: Callable[[Any], Any] = _identity
    post_transform: Callable[[Any], Any] = _identity
    children: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise TaskGraphError("task name must be non-empty")
        object.__setattr__(self, "children", tuple(self.children))

    def run(self, x, rng=None):
        return self.post_transform(self.policy(self.pre_transform(x), rng))


@dataclass(frozen=True)
class TaskGraph:
    nodes: Mapping[str, TaskNode] = field(default_factory=dict)
    roots: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", MappingProxyType(dict(self.nodes)))
        object.__setattr__(self, "roots", tuple(self.roots))

    @property
    def edges(self) -> list[tuple[str, str]]:
        return sorted((p, c) for p, node in self.nodes.items() for c in node.children)

    def parents(self, name: str) -> list[str]:
        return sorted(p for p, node in self.nodes.items() if name in node.children)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"name": n, "kind": self.nodes[n].kind, "children": list(self.nodes[n].children)}
                      for n in sorted(self.nodes)],
            "roots": list(self.roots),
            "edges": [list(e) for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, policies: Mapping[str, Callable]) -> "TaskGraph":
        """Rebuild structure from ``to_dict`` output; policies are looked up by node name."""
        missing = sorted({n["name"] for n in d["nodes"]} - set(policies))
        if missing:
            raise TaskGraphError(f"no policy supplied for {missing}")
        nodes = {n["name"]: TaskNode(n["name"], policies[n["name"]], n["kind"], children=tuple(n["children"]))
                 for n in d["nodes"]}
        graph = cls(nodes, tuple(d["roots"]))
        validate_topology(graph)
        return graph


def add_subtask(graph: TaskGraph, parent: str | None, node: TaskNode) -> TaskGraph:
    """New graph with ``node`` added as a root (``parent=None``) or as a child of ``parent``."""
    if parent == node.name or node.name in node.children:
        raise CycleError([node.name])
    if node.name in graph.nodes:
        raise TaskGraphError(f"duplicate task name {node.name!r}")
    nodes = dict(graph.nodes)
    nodes[node.name] = node
    roots = graph.roots
    if parent is None:
        roots = roots + (node.name,)
    else:
        if parent not in graph.nodes:
            raise TaskGraphError(f"unknown parent {parent!r}")
        nodes[parent] = replace(nodes[parent], children=nodes[parent].children + (node.name,))
    out = TaskGraph(nodes, roots)
    validate_topology(out)
    return out


def add_edge(graph: TaskGraph, parent: str, child: str) -> TaskGraph:
    """New graph with an extra ``parent -> child`` edge between existing nodes."""
    for name in (parent, child):
        if name not in graph.nodes:
            raise TaskGraphError(f"unknown task {name!r}")
    if child in graph.nodes[parent].children:
        return graph
    nodes = dict(graph.nodes)
    nodes[parent] = replace(nodes[parent], children=nodes[parent].children + (child,))
    roots = tuple(r for r in graph.roots if r != child)
    out = TaskGraph(nodes, roots)
    validate_topology(out)
    return out


def _find_cycle(graph: TaskGraph, remaining: set[str]) -> list[str]:
    # Every remaining node has a remaining parent, so walking parents must revisit a node.
    start = min(remaining)
    path, seen = [], {}
    cur = start
    while cur not in seen:
        seen[cur] = len(path)
        path.append(cur)
        cur = min(p for p in graph.parents(cur) if p in remaining)
    cycle = path[seen[cur]:]
    cycle.reverse()
    return cycle


def validate_topology(graph: TaskGraph) -> list[str]:
    """Topological order, ties broken by name; raises on cycles or dangling references."""
    for name, node in graph.nodes.items():
        if node.name != name:
            raise TaskGraphError(f"node registered as {name!r} is named {node.name!r}")
        for c in node.children:
            if c not in graph.nodes:
                raise TaskGraphError(f"task {name!r} references unknown child {c!r}")
    for r in graph.roots:
        if r not in graph.nodes:
            raise TaskGraphError(f"unknown root {r!r}")
    indeg = {n: 0 for n in graph.nodes}
    for _, c in graph.edges:
        indeg[c] += 1
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in graph.nodes[n].children:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) < len(graph.nodes):
        raise CycleError(_find_cycle(graph, set(graph.nodes) - set(order)))
    parentless = sorted(n for n in graph.nodes if not graph.parents(n))
    if sorted(graph.roots) != parentless:
        raise TaskGraphError(f"roots {sorted(graph.roots)} differ from parentless tasks {parentless}")
    return order


def execute(graph: TaskGraph, inputs: Mapping[str, Any],
            rngs: Mapping[str, np.random.Generator] | None = None) -> dict[str, Any]:
    """Evaluate every task in topological order and return all outputs by name.

    A root receives ``inputs[root]``.  A task with one parent receives that
    parent's output; with several parents it receives a tuple of their
    outputs ordered by parent name.
    """
    order = validate_topology(graph)
    missing = sorted(set(graph.roots) - set(inputs))
    if missing:
        raise TaskGraphError(f"no input for root task(s) {missing}")
    rngs = rngs or {}
    out = {}
    for name in order:
        parents = graph.parents(name)
        if not parents:
            x = inputs[name]
        elif len(parents) == 1:
            x = out[parents[0]]
        else:
            x = tuple(out[p] for p in parents)
        out[name] = graph.nodes[name].run(x, rngs.get(name))
    return {n: out[n] for n in sorted(out)}
