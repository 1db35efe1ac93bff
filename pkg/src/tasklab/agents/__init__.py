from .baseline import random_search_baseline
from .hierarchical import HierarchicalPlacer
from .nets import PolicyParams
from .ppo import (
    AgentConfig,
    Batch,
    PPOAgent,
    Trajectory,
    Transition,
    gae_advantages,
    grouper_config,
    placer_config,
    ppo_update,
    sample_action,
)

__all__ = [
    "AgentConfig", "Batch", "HierarchicalPlacer", "PPOAgent", "PolicyParams", "Trajectory",
    "Transition", "gae_advantages", "grouper_config", "placer_config", "ppo_update",
    "random_search_baseline", "sample_action",
]
