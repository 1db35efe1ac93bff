"""Task design and evaluation toolkit for reinforcement learning on systems problems.

The device-placement case study wires every piece together: typed spaces
and schemas, converters between system and agent views, task graphs of
cooperating agents, a simulated placement environment, PPO grouper and
placer agents, and a progressive-randomization evaluation protocol.
"""
from .converter import PlacementConverter, SystemMetrics, SystemState
from .env import DistributionSpec, PlacementEnv, TaskInstance, make_instance, sample_instance
from .graphs import CompGraph, DeviceSet, default_devices, generate_graph
from .protocol import ClassificationRecord, classify, derive_stream, run_protocol_class
from .simulator import Placement, simulate_runtime
from .spaces import CompositeSpace, IntegerSpace, IntegerTensorSpace, RealTensorSpace, build_placement_schema
from .taskgraph import TaskGraph, TaskNode, add_subtask, execute, validate_topology
from .workflow import ExperimentConfig, run_workflow

__version__ = "0.1.0"

__all__ = [
    "ClassificationRecord", "CompGraph", "CompositeSpace", "DeviceSet", "DistributionSpec", "ExperimentConfig",
    "IntegerSpace", "IntegerTensorSpace", "Placement", "PlacementConverter", "PlacementEnv", "RealTensorSpace",
    "SystemMetrics", "SystemState", "TaskGraph", "TaskInstance", "TaskNode", "add_subtask",
    "build_placement_schema", "classify", "default_devices", "derive_stream", "execute", "generate_graph",
    "make_instance", "run_protocol_class", "run_workflow", "sample_instance", "simulate_runtime",
    "validate_topology",
]
