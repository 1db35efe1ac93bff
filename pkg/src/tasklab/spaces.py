"""Layout descriptors for agent inputs and outputs, and the placement schemas.

A layout is built from deployment parameters (device list, input graph,
neighbourhood width) so that state and action shapes follow the deployment
rather than being hard-coded into an agent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

NODE_OPTIONS = ("is_current_node", "is_placed")
MAX_NEIGHBORS = 5
SENTINEL = -1

RECURRENT = "recurrent"
GRAPH = "graph"
VARIANTS = (RECURRENT, GRAPH)


class LayoutError(ValueError):
    """Raised when a layout cannot be built or a value does not fit it."""


@dataclass(frozen=True)
class Violation:
    path: str
    constraint: str

    def __str__(self) -> str:
        return f"{self.path or '<root>'}: {self.constraint}"


@dataclass(frozen=True)
class IntegerSpace:
    """Scalar integer in ``[low, high)``; flattens to a one-hot of width ``high - low``."""

    low: int
    high: int

    def __post_init__(self):
        if not self.low < self.high:
            raise LayoutError(f"IntegerSpace needs low < high, got [{self.low}, {self.high})")

    @property
    def flat_width(self) -> int:
        return self.high - self.low

    def to_dict(self) -> dict:
        return {"type": "int", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class IntegerTensorSpace:
    """Integer tensor with entries in ``[low, high)``; flattens raw, row-major."""

    shape: tuple[int, ...]
    low: int
    high: int

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 1 for d in self.shape):
            raise LayoutError(f"tensor dimensions must be >= 1, got {self.shape}")
        if not self.low < self.high:
            raise LayoutError(f"IntegerTensorSpace needs low < high, got [{self.low}, {self.high})")

    @property
    def flat_width(self) -> int:
        return int(np.prod(self.shape))

    def to_dict(self) -> dict:
        return {"type": "int_tensor", "shape": list(self.shape), "low": self.low, "high": self.high}


@dataclass(frozen=True)
class RealTensorSpace:
    shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 1 for d in self.shape):
            raise LayoutError(f"tensor dimensions must be >= 1, got {self.shape}")

    @property
    def flat_width(self) -> int:
        return int(np.prod(self.shape))

    def to_dict(self) -> dict:
        return {"type": "real", "shape": list(self.shape)}


@dataclass(frozen=True)
class CompositeSpace:
    """Named children, kept sorted by name so flattening order is reproducible."""

    children: tuple[tuple[str, Any], ...]

    def __init__(self, children):
        items = children.items() if isinstance(children, dict) else children
        items = tuple(sorted(((str(k), v) for k, v in items), key=lambda kv: kv[0]))
        names = [k for k, _ in items]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate child names in composite: {names}")
        object.__setattr__(self, "children", items)

    @property
    def names(self) -> list[str]:
        return [k for k, _ in self.children]

    def __getitem__(self, name: str):
        for k, v in self.children:
            if k == name:
                return v
        raise KeyError(name)

    @property
    def flat_width(self) -> int:
        return sum(child.flat_width for _, child in self.children)

    def to_dict(self) -> dict:
        return {"type": "composite", "children": {k: v.to_dict() for k, v in self.children}}


SpaceLayout = IntegerSpace | IntegerTensorSpace | RealTensorSpace | CompositeSpace


def space_from_dict(d: dict) -> SpaceLayout:
    kind = d["type"]
    if kind == "int":
        return IntegerSpace(d["low"], d["high"])
    if kind == "int_tensor":
        return IntegerTensorSpace(tuple(d["shape"]), d["low"], d["high"])
    if kind == "real":
        return RealTensorSpace(tuple(d["shape"]))
    if kind == "composite":
        return CompositeSpace({k: space_from_dict(v) for k, v in d["children"].items()})
    raise LayoutError(f"unknown space type {kind!r}")


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, (bool, np.bool_))


def validate_value(space: SpaceLayout, value, path: str = "") -> Violation | None:
    """Return ``None`` when ``value`` lies in ``space``, else the first violation found."""
    if isinstance(space, IntegerSpace):
        if not _is_int(value):
            return Violation(path, f"expected integer, got {type(value).__name__}")
        if not space.low <= value < space.high:
            return Violation(path, f"value {value} outside [{space.low}, {space.high})")
        return None
    if isinstance(space, (RealTensorSpace, IntegerTensorSpace)):
        try:
            arr = np.asarray(value)
        except Exception:  # ragged nested lists and the like
            return Violation(path, "not convertible to an array")
        if arr.shape != space.shape:
            return Violation(path, f"shape {arr.shape} != {space.shape}")
        if isinstance(space, RealTensorSpace):
            if not np.issubdtype(arr.dtype, np.number) or np.issubdtype(arr.dtype, np.complexfloating):
                return Violation(path, f"non-real dtype {arr.dtype}")
            if not np.all(np.isfinite(arr)):
                return Violation(path, "non-finite entries")
            return None
        if not np.issubdtype(arr.dtype, np.integer):
            return Violation(path, f"expected integer entries, got {arr.dtype}")
        if arr.size and (arr.min() < space.low or arr.max() >= space.high):
            return Violation(path, f"entries outside [{space.low}, {space.high})")
        return None
    if isinstance(space, CompositeSpace):
        if not isinstance(value, dict):
            return Violation(path, f"expected mapping, got {type(value).__name__}")
        for name in space.names:
            if name not in value:
                return Violation(_join(path, name), f"missing child {name!r}")
        extra = sorted(set(value) - set(space.names))
        if extra:
            return Violation(_join(path, extra[0]), f"unexpected child {extra[0]!r}")
        for name, child in space.children:
            v = validate_value(child, value[name], _join(path, name))
            if v is not None:
                return v
        return None
    raise LayoutError(f"not a space: {space!r}")


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def check_value(space: SpaceLayout, value) -> None:
    v = validate_value(space, value)
    if v is not None:
        raise LayoutError(str(v))


def flatten(space: SpaceLayout, value) -> np.ndarray:
    if isinstance(space, IntegerSpace):
        out = np.zeros(space.flat_width)
        out[int(value) - space.low] = 1.0
        return out
    if isinstance(space, (RealTensorSpace, IntegerTensorSpace)):
        return np.asarray(value, dtype=float).reshape(-1)
    if isinstance(space, CompositeSpace):
        parts = [flatten(child, value[name]) for name, child in space.children]
        return np.concatenate(parts) if parts else np.zeros(0)
    raise LayoutError(f"not a space: {space!r}")


def unflatten(space: SpaceLayout, flat):
    flat = np.asarray(flat, dtype=float).reshape(-1)
    if flat.size != space.flat_width:
        raise LayoutError(f"flat length mismatch: expected {space.flat_width}, got {flat.size}")
    if isinstance(space, IntegerSpace):
        return space.low + int(np.argmax(flat))
    if isinstance(space, RealTensorSpace):
        return flat.reshape(space.shape).copy()
    if isinstance(space, IntegerTensorSpace):
        return flat.reshape(space.shape).astype(np.int64)
    out = {}
    offset = 0
    for name, child in space.children:
        w = child.flat_width
        out[name] = unflatten(child, flat[offset:offset + w])
        offset += w
    return out


@dataclass(frozen=True)
class DeploymentParams:
    devices: tuple[str, ...]
    input_graph: Any
    max_neighbors: int = MAX_NEIGHBORS
    node_options: tuple[str, ...] = NODE_OPTIONS

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "node_options", tuple(self.node_options))
        if not self.devices:
            raise LayoutError("device list is empty")
        if len(set(self.devices)) != len(self.devices):
            raise LayoutError(f"duplicate device names: {list(self.devices)}")
        if self.max_neighbors < 1:
            raise LayoutError("max_neighbors must be >= 1")


@dataclass(frozen=True)
class SchemaLayout:
    input_space: SpaceLayout
    output_space: IntegerSpace
    variant: str
    devices: tuple[str, ...] = field(default=())
    max_neighbors: int = MAX_NEIGHBORS
    node_options: tuple[str, ...] = NODE_OPTIONS

    @property
    def num_devices(self) -> int:
        return self.output_space.high

    @property
    def num_ops(self) -> int:
        if self.variant == RECURRENT:
            return self.input_space.shape[0]
        return self.input_space["current_node_num"].high

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "devices": list(self.devices),
            "max_neighbors": self.max_neighbors,
            "node_options": list(self.node_options),
            "input_space": self.input_space.to_dict(),
            "output_space": self.output_space.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaLayout":
        return cls(
            input_space=space_from_dict(d["input_space"]),
            output_space=space_from_dict(d["output_space"]),
            variant=d["variant"],
            devices=tuple(d.get("devices", ())),
            max_neighbors=d.get("max_neighbors", MAX_NEIGHBORS),
            node_options=tuple(d.get("node_options", NODE_OPTIONS)),
        )

    @classmethod
    def from_json(cls, s: str) -> "SchemaLayout":
        return cls.from_dict(json.loads(s))


def build_placement_schema(params: DeploymentParams, variant: str) -> SchemaLayout:
    if variant not in VARIANTS:
        raise LayoutError(f"unknown schema variant {variant!r}")
    num_ops = params.input_graph.num_ops
    if num_ops < 1:
        raise LayoutError("input graph has no operations")
    num_devices = len(params.devices)
    if variant == RECURRENT:
        inputs = RealTensorSpace((num_ops, num_devices))
    else:
        k = params.max_neighbors
        inputs = CompositeSpace({
            "embeddings": RealTensorSpace((num_ops, len(params.node_options) + num_devices)),
            "current_node_num": IntegerSpace(0, num_ops),
            "in_neighbors": IntegerTensorSpace((num_ops, k), SENTINEL, num_ops),
            "out_neighbors": IntegerTensorSpace((num_ops, k), SENTINEL, num_ops),
        })
    return SchemaLayout(
        input_space=inputs,
        output_space=IntegerSpace(0, num_devices),
        variant=variant,
        devices=params.devices,
        max_neighbors=params.max_neighbors,
        node_options=params.node_options,
    )


def composite_action_space(spaces: dict[str, SpaceLayout] | Sequence[tuple[str, SpaceLayout]]) -> CompositeSpace:
    """Action space of a shared-parameter node emitting one action per sub-task."""
    return CompositeSpace(spaces)
