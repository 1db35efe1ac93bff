"""Episode loop for the grouper/placer pair on the simulated placement task."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agents.hierarchical import HierarchicalPlacer
from .agents.nets import PlacerInput
from .agents.ppo import Batch, gae_advantages
from .converter import PlacementConverter, RewardTransform
from .env import INCREMENTAL, PlacementEnv, TaskInstance
from .graphs import DeviceSet, op_features
from .simulator import Placement, improvement, simulate_runtime


@dataclass
class StepRecord:
    """One completed placement (end of an episode)."""

    step: int
    run_time: float
    valid: bool
    n: int
    evaluations: int
    instance: int = 0


@dataclass
class TrainingLog:
    steps: list[StepRecord] = field(default_factory=list)
    initial_run_times: list[float] = field(default_factory=list)
    transitions: int = 0
    evaluations: int = 0
    grouper_updates: int = 0
    placer_updates: int = 0
    invalid_events: int = 0
    stopped_early: bool = False


@dataclass
class Streams:
    weight_init: np.random.Generator
    action_sampling: np.random.Generator
    minibatch: np.random.Generator
    measurement: np.random.Generator


def make_env(instance: TaskInstance, devices: DeviceSet, model: HierarchicalPlacer, penalty: float,
             reward_scale: float | None, reward_mode: str, noise_sigma: float,
             noise_rng: np.random.Generator | None) -> PlacementEnv:
    # Scale rewards by the instance's initial run time unless told otherwise.
    base = PlacementConverter(model.schema, penalty)
    env = PlacementEnv(instance, devices, base, model.placer.config.groups_per_evaluation,
                       reward_mode, noise_sigma, noise_rng)
    scale = 1.0 / env.initial_run_time if reward_scale is None else reward_scale
    env.converter = PlacementConverter(model.schema, penalty, RewardTransform(scale=scale))
    return env


def run_episode(model: HierarchicalPlacer, env: PlacementEnv, streams: Streams):
    graph = env.instance.comp_graph
    feats = op_features(graph, model.schema.max_neighbors)
    groups, g_logp, g_val = model.group(feats, streams.action_sampling)
    env.reset(groups, model.num_groups)
    grouped = env.grouped
    gfeat = grouped.group_features(feats)
    steps, rewards, dones = [], [], []
    while not env.done:
        targets = env.next_groups()
        k = len(targets)
        chunk = model.place_groups(grouped, gfeat, targets, env.placement, env.devices,
                                   streams.action_sampling)
        _, r, done = env.step([s.action for s in chunk])
        steps += chunk
        rewards += [0.0] * (k - 1) + [r]
        dones += [False] * (k - 1) + [done]
    return feats, groups, g_logp, g_val, steps, np.array(rewards), np.array(dones)


@dataclass
class _GrouperBuffer:
    feats: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    advantages: list = field(default_factory=list)
    returns: list = field(default_factory=list)

    def add(self, feats, actions, log_probs, adv, ret) -> None:
        for lst, x in zip((self.feats, self.actions, self.log_probs, self.advantages, self.returns),
                          (feats, actions, log_probs, adv, ret)):
            lst.append(np.asarray(x))

    def __len__(self) -> int:
        return len(self.feats)

    def batch(self) -> Batch:
        return Batch(*(np.concatenate(x) for x in (self.feats, self.actions, self.log_probs,
                                                     self.advantages, self.returns)))


def update_agents(model: HierarchicalPlacer, feats, groups, g_logp, g_val, steps, rewards, dones,
                  streams: Streams, buffer: _GrouperBuffer | None = None) -> tuple[int, int]:
    """Placer updates in batches of ``batch_size`` transitions; the grouper once per
    ``episodes_per_update`` grouping passes (pooled in ``buffer``)."""
    pc = model.placer.config
    p_val = np.array([s.value for s in steps])
    adv, ret = gae_advantages(rewards, p_val, dones, pc.discount, pc.gae_lambda)
    inputs = PlacerInput.stack([s.inputs for s in steps])
    actions = np.array([s.action for s in steps])
    logps = np.array([s.log_prob for s in steps])
    size = pc.batch_size or len(steps)
    p_updates = 0
    for start in range(0, len(steps), size):
        idx = np.arange(start, min(start + size, len(steps)))
        model.placer.update(Batch(inputs.take(idx), actions[idx], logps[idx], adv[idx], ret[idx]),
                            streams.minibatch)
        p_updates += 1

    gc = model.grouper.config
    n = len(groups)
    g_rewards = np.zeros(n)
    g_rewards[-1] = rewards.sum()
    g_dones = np.zeros(n, dtype=bool)
    g_dones[-1] = True
    g_adv, g_ret = gae_advantages(g_rewards, g_val, g_dones, gc.discount, gc.gae_lambda)
    buffer = _GrouperBuffer() if buffer is None else buffer
    buffer.add(feats, groups, g_logp, g_adv, g_ret)
    if len(buffer) < gc.episodes_per_update:
        return 0, p_updates
    model.grouper.update(buffer.batch(), streams.minibatch)
    buffer.__init__()
    return 1, p_updates


def train(model: HierarchicalPlacer, instances: Sequence[TaskInstance], devices: DeviceSet, budget: int,
          streams: Streams, *, penalty: float = 100.0, reward_scale: float | None = None,
          reward_mode: str = INCREMENTAL, noise_sigma: float = 0.0, patience: int | None = None,
          on_step: Callable[[StepRecord], None] | None = None) -> TrainingLog:
    """Train until ``budget`` graph evaluations have been spent.

    Instances are visited round-robin, one episode each.  With ``patience``
    set, training stops after that many completed placements without a new
    best run time.
    """
    model.check_devices(devices)
    envs = [make_env(inst, devices, model, penalty, reward_scale, reward_mode, noise_sigma,
                     streams.measurement) for inst in instances]
    log = TrainingLog(initial_run_times=[e.initial_run_time for e in envs])
    best, since_best = np.inf, 0
    episode = 0
    buffer = _GrouperBuffer()
    while log.evaluations < budget:
        env = envs[episode % len(envs)]
        before = env.evaluations
        feats, groups, g_logp, g_val, steps, rewards, dones = run_episode(model, env, streams)
        gu, pu = update_agents(model, feats, groups, g_logp, g_val, steps, rewards, dones, streams, buffer)
        log.grouper_updates += gu
        log.placer_updates += pu
        log.evaluations += env.evaluations - before
        log.transitions += env.evaluations - before
        metrics = env.last_metrics
        if not metrics.valid:
            log.invalid_events += 1
        rec = StepRecord(episode, env.last_measured, metrics.valid, log.transitions, log.evaluations,
                         episode % len(envs))
        log.steps.append(rec)
        if on_step:
            on_step(rec)
        episode += 1
        if patience is not None:
            if metrics.valid and rec.run_time < best:
                best, since_best = rec.run_time, 0
            else:
                since_best += 1
                if since_best >= patience:
                    log.stopped_early = True
                    break
    return log


def greedy_improvement(model: HierarchicalPlacer, instance: TaskInstance, devices: DeviceSet,
                       penalty: float = 100.0) -> float:
    graph = instance.comp_graph
    initial = simulate_runtime(graph, Placement.single_device(graph.num_ops), devices, penalty).run_time
    achieved = simulate_runtime(graph, model.greedy_placement(graph, devices), devices, penalty).run_time
    return improvement(initial, achieved)
