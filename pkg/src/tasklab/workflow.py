"""Experiment configs, protocol runs on disk, checkpoint evaluation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import spaces
from .agents import AgentConfig, HierarchicalPlacer, grouper_config, placer_config
from .env import INCREMENTAL, TERMINAL, DistributionSpec, TaskInstance
from .graphs import DEFAULT_BANDWIDTH, FAMILIES, GPU_MEMORY, DeviceSet, default_devices
from .protocol import (
    FINAL_WINDOW,
    PINNED_SEED,
    ClassificationRecord,
    TrialResult,
    classify,
    classify_results,
    generalization_matrix,
    mean_std,
    protocol_class,
    run_protocol_class,
)
from .simulator import improvement
from .taskgraph import TaskGraph, TaskNode, add_subtask, validate_topology

SPEC_VERSION = "1.0"
OUTPUT_ROOT_ENV = "TASKLAB_OUTPUT_ROOT"
TRIAL_COLUMNS = ("trial", "step", "run_time", "valid", "improvement_final", "improvement_best", "n",
                 "evaluations", "seeds", "config_hash")


class ConfigError(ValueError):
    pass


def fmt(x: float, digits: int = 6) -> str:
    """Fixed-point text, independent of locale."""
    return "nan" if x is None or not np.isfinite(x) else f"{x:.{digits}f}"


def _default_task_graph() -> dict:
    g = add_subtask(TaskGraph(), None, TaskNode("grouper", _unbound, kind="grouper"))
    g = add_subtask(g, "grouper", TaskNode("placer", _unbound, kind="placer"))
    return g.to_dict()


def _unbound(x, rng=None):
    raise RuntimeError("structural node; policies are bound by the training loop")


def _default_devices() -> dict:
    return {"num_gpus": 4, "gpu_memory": GPU_MEMORY, "bandwidth": DEFAULT_BANDWIDTH}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment; ``output_dir`` is excluded from the hash."""

    name: str = "experiment"
    spec_version: str = SPEC_VERSION
    schema_variant: str = spaces.GRAPH
    schema_devices: list | None = None
    penalty: float = 100.0
    reward_scale: float | None = None
    reward_mode: str = INCREMENTAL
    task_graph: dict = field(default_factory=_default_task_graph)
    grouper: dict = field(default_factory=dict)
    placer: dict = field(default_factory=dict)
    devices: dict = field(default_factory=_default_devices)
    distribution: dict = field(default_factory=lambda: DistributionSpec().to_dict())
    protocol_class: int = 1
    trials: int = 10
    budget: int = 1000
    master_seed: int = 0
    pinned_optimization: list = field(default_factory=lambda: [PINNED_SEED, 0])
    pinned_instance: dict | None = None
    final_window: int = FINAL_WINDOW
    patience: int | None = None
    threshold: float = 0.30
    output_dir: str = "runs/experiment"

    # ------------------------------------------------------------ io

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        if "spec_version" in d and str(d["spec_version"]).split(".")[0] != SPEC_VERSION.split(".")[0]:
            raise ConfigError(f"unsupported spec_version {d['spec_version']!r}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e

    @property
    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # ----------------------------------------------------- components

    def device_set(self) -> DeviceSet:
        d = self.devices
        if "devices" in d:
            return DeviceSet.from_dict(d)
        return default_devices(int(d.get("num_gpus", 4)), gpu_memory=int(d.get("gpu_memory", GPU_MEMORY)),
                               bandwidth=float(d.get("bandwidth", DEFAULT_BANDWIDTH)))

    def distribution_spec(self) -> DistributionSpec:
        return DistributionSpec.from_dict(self.distribution)

    def agent_configs(self) -> tuple[AgentConfig, AgentConfig]:
        return grouper_config(**self.grouper), placer_config(**self.placer)

    def validate(self) -> None:
        """Raise ``ConfigError`` on any inconsistency, before anything runs."""
        try:
            devices = self.device_set()
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad device description: {e}") from e
        if self.schema_devices is not None and list(self.schema_devices) != list(devices.names):
            raise ConfigError(f"schema devices {list(self.schema_devices)} differ from environment devices "
                              f"{list(devices.names)}")
        if self.schema_variant != spaces.GRAPH:
            raise ConfigError(f"the placer needs the {spaces.GRAPH!r} schema variant, got {self.schema_variant!r}")
        try:
            g_cfg, p_cfg = self.agent_configs()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad agent config: {e}") from e
        if g_cfg.num_groups != p_cfg.num_groups:
            raise ConfigError(f"grouper emits {g_cfg.num_groups} groups but the placer expects {p_cfg.num_groups}")
        try:
            cls = protocol_class(self.protocol_class)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        dist = self.distribution_spec()
        if dist.family not in FAMILIES:
            raise ConfigError(f"unknown graph family {dist.family!r}")
        if "out-of-dist" in cls.workload_mode:
            if dist.held_out_family is None or dist.held_out_family == dist.family:
                raise ConfigError(f"C{cls.k} needs a held-out family different from {dist.family!r}")
        if self.trials < 1 or self.budget < 1 or self.final_window < 1:
            raise ConfigError("trials, budget and final_window must be positive")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.reward_mode not in (INCREMENTAL, TERMINAL):
            raise ConfigError(f"unknown reward mode {self.reward_mode!r}")
        if self.penalty <= 0:
            raise ConfigError("penalty must be positive")
        try:
            graph = TaskGraph.from_dict(self.task_graph, {n["name"]: _unbound for n in self.task_graph["nodes"]})
            validate_topology(graph)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad task graph: {e}") from e
        kinds = sorted(n.kind for n in graph.nodes.values())
        if kinds != ["grouper", "placer"] or graph.edges != [("grouper", "placer")]:
            raise ConfigError("task graph must be grouper -> placer")


def resolve_output_dir(config: ExperimentConfig, override: str | Path | None = None) -> Path:
    """Relative output directories live under ``$TASKLAB_OUTPUT_ROOT`` when it is set."""
    out = Path(override or config.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _seeds_text(seeds: dict) -> str:
    return ";".join(f"{role}={':'.join(str(x) for x in seeds[role])}" for role in sorted(seeds))


def trial_rows(result: TrialResult, config_hash: str, window: int) -> list[list[str]]:
    """Per-step rows; final and best improvements are the running values at that step."""
    rows = []
    best = np.inf
    seeds = _seeds_text(result.seeds)
    for i, (rt, ok, n) in enumerate(zip(result.run_times, result.valid, result.ns)):
        best = min(best, rt)
        final = improvement(result.initial_run_time, float(np.mean(result.run_times[max(0, i + 1 - window):i + 1])))
        rows.append([str(result.trial), str(i), fmt(rt, 9), str(int(ok)), fmt(final),
                     fmt(improvement(result.initial_run_time, best)), str(n), "", seeds, config_hash])
    if rows:
        rows[-1][7] = str(result.evaluations)
    return rows


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _summary(config: ExperimentConfig, results: list[TrialResult]) -> dict:
    k = config.protocol_class
    record = classify_results(results, k, config.threshold)
    per_trial = []
    for r in results:
        per_trial.append({
            "trial": r.trial,
            "instance_hash": r.instance_hash,
            "initial_run_time": fmt(r.initial_run_time, 9),
            "improvement_final": fmt(r.improvement_final),
            "improvement_best": fmt(r.improvement_best),
            "improvement_greedy": fmt(r.improvement_greedy),
            "improvement_test": None if r.improvement_test is None else fmt(r.improvement_test),
            "n": r.n,
            "evaluations": r.evaluations,
            "invalid_events": r.invalid_events,
            "diverged": r.diverged,
            "stopped_early": r.stopped_early,
        })
    finals = [r.improvement_final for r in results]
    bests = [r.improvement_best for r in results]
    return {
        "config_hash": config.config_hash,
        "spec_version": config.spec_version,
        "name": config.name,
        "record": record.format(),
        "criterion": record.criterion,
        "n_consistent": record.n_consistent,
        "protocol_class": k,
        "threshold": config.threshold,
        "s": record.s,
        "successes": record.successes,
        "final_mean_std": [fmt(v) for v in mean_std(finals)],
        "best_mean_std": [fmt(v) for v in mean_std(bests)],
        "trials": per_trial,
    }


def run_workflow(config: ExperimentConfig, output_dir: str | Path | None = None, resume: bool = True) -> Path:
    """Run every trial of the configured class and write logs, checkpoints and a summary.

    Layout::

        config.json
        results.csv                 all trials, one row per completed placement
        trials/trial_NNN.json       trial result (used for resuming)
        trials/trial_NNN.csv        that trial's rows
        checkpoints/trial_NNN.json  final model
        summary.json

    With ``resume`` a trial whose result file already exists under the same
    config hash is loaded instead of rerun.
    """
    config.validate()
    out = resolve_output_dir(config, output_dir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    h = config.config_hash
    cfg_path = out / "config.json"
    if cfg_path.exists():
        old = json.loads(cfg_path.read_text())
        if old.get("config_hash") != h:
            raise ConfigError(f"{out} holds a different experiment (hash {old.get('config_hash')}); "
                              "use another output directory")
    _atomic_write(cfg_path, json.dumps({"config_hash": h, "config": config.to_dict()}, indent=2, sort_keys=True))

    done: dict[int, TrialResult] = {}
    if resume:
        for t in range(config.trials):
            p = out / "trials" / f"trial_{t:03d}.json"
            if p.exists():
                d = json.loads(p.read_text())
                if d.get("config_hash") == h:
                    done[t] = TrialResult.from_dict(d["result"])

    def save(r: TrialResult) -> None:
        stem = f"trial_{r.trial:03d}"
        _atomic_write(out / "checkpoints" / f"{stem}.json",
                      json.dumps({"config_hash": h, "model": r.model.to_dict()}, sort_keys=True))
        _atomic_write(out / "trials" / f"{stem}.csv",
                      _csv_text(TRIAL_COLUMNS, trial_rows(r, h, config.final_window)))
        _atomic_write(out / "trials" / f"{stem}.json",
                      json.dumps({"config_hash": h, "checkpoint": f"checkpoints/{stem}.json",
                                  "result": r.to_dict()}, sort_keys=True))

    g_cfg, p_cfg = config.agent_configs()
    todo = [t for t in range(config.trials) if t not in done]
    if todo:
        new = run_protocol_class(
            config.protocol_class, config.trials, config.budget, trials=todo, on_trial=save,
            dist=config.distribution_spec(), devices=config.device_set(), grouper_cfg=g_cfg, placer_cfg=p_cfg,
            master_seed=config.master_seed, pinned_optimization=tuple(config.pinned_optimization),
            pinned_instance=config.pinned_instance, penalty=config.penalty, reward_scale=config.reward_scale,
            reward_mode=config.reward_mode, patience=config.patience, final_window=config.final_window,
        )
        for r in new:
            done[r.trial] = r
    results = [done[t] for t in sorted(done)]
    rows = [row for r in results for row in trial_rows(r, h, config.final_window)]
    _atomic_write(out / "results.csv", _csv_text(TRIAL_COLUMNS, rows))
    _atomic_write(out / "summary.json", json.dumps(_summary(config, results), indent=2, sort_keys=True))
    return out


# ------------------------------------------------------------ evaluation

@dataclass
class LoadedTrial:
    experiment: Path
    trial: int
    config_hash: str
    result: TrialResult
    model: HierarchicalPlacer | None


def load_trials(experiment_dir: str | Path) -> list[LoadedTrial]:
    """Trials of one experiment with their checkpoints; a missing checkpoint loads as ``None``."""
    d = Path(experiment_dir)
    if not (d / "config.json").exists():
        raise FileNotFoundError(f"{d} is not an experiment directory")
    out = []
    for p in sorted((d / "trials").glob("trial_*.json")):
        meta = json.loads(p.read_text())
        ck = d / meta["checkpoint"]
        model = None
        if ck.exists():
            model = HierarchicalPlacer.from_dict(json.loads(ck.read_text())["model"])
        else:
            warnings.warn(f"missing checkpoint {ck}; its row is excluded")
        out.append(LoadedTrial(d, int(meta["result"]["trial"]), meta["config_hash"],
                               TrialResult.from_dict(meta["result"]), model))
    return out


def evaluate_checkpoints(experiment_dirs: Sequence[str | Path], instances: Sequence[TaskInstance] | None = None,
                         out_dir: str | Path | None = None, threshold: float = 0.30,
                         k: int = 4) -> tuple[np.ndarray, ClassificationRecord, Path]:
    """Cross-evaluate every trial's final model on every instance.

    By default the instances are the trials' own training instances, which
    gives the square model-by-graph matrix.  Writes ``matrix.csv`` and
    ``evaluation.json`` into ``out_dir`` (default: the first experiment).
    """
    trials = [t for d in experiment_dirs for t in load_trials(d)]
    if not trials:
        raise FileNotFoundError("no trials found")
    configs = {t.experiment: ExperimentConfig.from_dict(json.loads((t.experiment / "config.json").read_text())["config"])
               for t in trials}
    device_sets = {json.dumps(c.device_set().to_dict(), sort_keys=True) for c in configs.values()}
    if len(device_sets) != 1:
        raise ConfigError("experiments were run on different device sets")
    devices = next(iter(configs.values())).device_set()
    penalty = next(iter(configs.values())).penalty
    if instances is None:
        instances = [TaskInstance.from_provenance(t.result.instance) for t in trials]
    matrix = generalization_matrix([t.model for t in trials], instances, devices, penalty)
    cells = matrix[np.isfinite(matrix)]
    ns = [t.result.n for t, row in zip(trials, matrix) for v in row if np.isfinite(v)]
    if cells.size == 0:
        raise ConfigError("no cell could be evaluated")
    record = classify(cells, ns, k, threshold, f"greedy cross-graph improvement >= {threshold:.2f}")
    out = Path(out_dir) if out_dir else Path(experiment_dirs[0])
    out.mkdir(parents=True, exist_ok=True)
    header = ["model", "n"] + [f"graph_{j}" for j in range(len(instances))]
    rows = []
    for t, row in zip(trials, matrix):
        rows.append([f"{t.experiment.name}/trial_{t.trial:03d}", str(t.result.n)] + [fmt(v) for v in row])
    _atomic_write(out / "matrix.csv", _csv_text(header, rows))
    _atomic_write(out / "evaluation.json", json.dumps({
        "record": record.format(),
        "criterion": record.criterion,
        "config_hashes": sorted({t.config_hash for t in trials}),
        "instances": [{"column": f"graph_{j}", "hash": inst.content_hash, **inst.provenance()}
                      for j, inst in enumerate(instances)],
        "absent_cells": int(matrix.size - cells.size),
    }, indent=2, sort_keys=True))
    return matrix, record, out
