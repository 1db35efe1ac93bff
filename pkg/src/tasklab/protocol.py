"""Progressive randomization: seed streams, the C0-C6 ladder and classification records."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .agents import AgentConfig, HierarchicalPlacer
from .env import INCREMENTAL, DistributionSpec, EnvError, TaskInstance, make_instance, sample_instance
from .graphs import DeviceSet
from .simulator import INVALID_PENALTY, Placement, improvement, simulate_runtime
from .training import Streams, greedy_improvement, train

FIXED = "fixed"
RANDOM = "random"
DEFAULT_THRESHOLD = 0.30
PINNED_SEED = 1234
FINAL_WINDOW = 10


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolClass:
    k: int
    optimization_seed_mode: str
    workload_mode: str

    @property
    def generalization(self) -> bool:
        return "dist" in self.workload_mode

    @property
    def randomized_workload(self) -> bool:
        return self.workload_mode.startswith("randomized")


PROTOCOL_CLASSES = (
    ProtocolClass(0, FIXED, "fixed-blackbox"),
    ProtocolClass(1, RANDOM, "fixed-blackbox"),
    ProtocolClass(2, RANDOM, "randomized-blackbox"),
    ProtocolClass(3, RANDOM, "fixed-in-dist"),
    ProtocolClass(4, RANDOM, "randomized-in-dist"),
    ProtocolClass(5, RANDOM, "fixed-out-of-dist"),
    ProtocolClass(6, RANDOM, "randomized-out-of-dist"),
)


def protocol_class(k: int) -> ProtocolClass:
    if not isinstance(k, (int, np.integer)) or not 0 <= k < len(PROTOCOL_CLASSES):
        raise ProtocolError(f"protocol class must be 0..6, got {k!r}")
    return PROTOCOL_CLASSES[int(k)]


def class_for_modes(optimization_seed_mode: str, workload_mode: str) -> ProtocolClass:
    for c in PROTOCOL_CLASSES:
        if (c.optimization_seed_mode, c.workload_mode) == (optimization_seed_mode, workload_mode):
            return c
    raise ProtocolError(f"no class for ({optimization_seed_mode}, {workload_mode})")


# ------------------------------------------------------------ seed streams

ROLES = ("workload", "weight-init", "action-sampling", "minibatch", "measurement", "test-workload")
OPTIMIZATION_ROLES = ("weight-init", "action-sampling", "minibatch", "measurement")


def stream_key(master: int, trial: int, role: str) -> list[int]:
    """The integers a stream is derived from, recorded for provenance."""
    if role not in ROLES:
        raise ProtocolError(f"unknown stream role {role!r}")
    return [int(master), int(trial), ROLES.index(role)]


def derive_stream(master: int, trial: int, role: str) -> np.random.Generator:
    """Independent generator for one (trial, role) pair under a master seed."""
    master, trial, code = stream_key(master, trial, role)
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(trial, code)))


# ---------------------------------------------------- classification records

_RECORD_RE = re.compile(r"^C_(\d+)\(n=(\d+)(?:\.\.(\d+))?,s=(\d+),f=(\d+\.\d\d)\)$")


@dataclass(frozen=True)
class ClassificationRecord:
    """``C_k(n, s, f)``; ``n`` is a ``(lo, hi)`` pair when trials disagree.

    The success count is stored exactly.  Parsing recovers it from the
    two-decimal ``f`` by rounding, which is unique whenever ``s < 100``.
    """

    k: int
    n: int | tuple[int, int]
    s: int
    successes: int
    criterion: str = field(default="", compare=False)

    def __post_init__(self):
        protocol_class(self.k)
        if self.s < 1:
            raise ProtocolError("s must be >= 1")
        if not 0 <= self.successes <= self.s:
            raise ProtocolError("successes must lie in [0, s]")
        lo, hi = (self.n, self.n) if isinstance(self.n, int) else self.n
        if not 0 < lo <= hi:
            raise ProtocolError(f"n must be positive, got {self.n}")
        if not isinstance(self.n, int):
            object.__setattr__(self, "n", (int(lo), int(hi)) if lo != hi else int(lo))

    @property
    def f(self) -> float:
        return self.successes / self.s

    @property
    def n_consistent(self) -> bool:
        return isinstance(self.n, int)

    def format(self) -> str:
        n = str(self.n) if isinstance(self.n, int) else f"{self.n[0]}..{self.n[1]}"
        return f"C_{self.k}(n={n},s={self.s},f={self.f:.2f})"

    __str__ = format

    @classmethod
    def parse(cls, text: str, criterion: str = "") -> "ClassificationRecord":
        m = _RECORD_RE.match(text.strip())
        if not m:
            raise ProtocolError(f"not a classification record: {text!r}")
        k, lo, hi, s, f = m.groups()
        s = int(s)
        n = int(lo) if hi is None else (int(lo), int(hi))
        successes = int(round(float(f) * s))
        rec = cls(int(k), n, s, min(successes, s), criterion)
        if rec.format() != text.strip():
            raise ProtocolError(f"f={f} is not a fraction of s={s}")
        return rec


def classify(improvements: Sequence[float], n: int | Sequence[int], k: int,
             threshold: float = DEFAULT_THRESHOLD, criterion: str | None = None) -> ClassificationRecord:
    """Record for trials whose improvements are compared ``>= threshold``.

    ``n`` is one transition count or one per trial; differing counts are
    kept as a range.
    """
    imps = np.asarray(improvements, dtype=float)
    if imps.size == 0:
        raise ProtocolError("classify needs at least one result")
    if not 0 < threshold < 1:
        raise ProtocolError(f"threshold must lie in (0, 1), got {threshold}")
    ns = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if ns.size not in (1, imps.size):
        raise ProtocolError("need one n or one n per result")
    lo, hi = int(ns.min()), int(ns.max())
    successes = int(np.sum(imps >= threshold))
    text = criterion or f"improvement >= {threshold:.2f}"
    return ClassificationRecord(int(k), lo if lo == hi else (lo, hi), int(imps.size), successes, text)


# --------------------------------------------------------------- trials

IMPROVEMENT_KINDS = ("final", "best", "greedy", "test")


@dataclass
class TrialResult:
    trial: int
    seeds: dict
    instance: dict
    instance_hash: str
    initial_run_time: float
    run_times: list
    valid: list
    ns: list
    evaluations: int
    improvement_final: float
    improvement_best: float
    improvement_greedy: float
    improvement_test: float | None = None
    test_instance: dict | None = None
    invalid_events: int = 0
    diverged: bool = False
    stopped_early: bool = False
    model: HierarchicalPlacer | None = field(default=None, compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.ns[-1] if self.ns else 0

    def improvement(self, use: str = "final") -> float:
        if use not in IMPROVEMENT_KINDS:
            raise ProtocolError(f"unknown improvement kind {use!r}")
        value = getattr(self, f"improvement_{use}")
        if value is None:
            raise ProtocolError(f"trial {self.trial} has no {use} improvement")
        return value

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "model"}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(**d)


def classify_results(results: Sequence[TrialResult], k: int, threshold: float = DEFAULT_THRESHOLD,
                     use: str | None = None) -> ClassificationRecord:
    """Classify trial results; generalization classes default to the test-instance improvement."""
    if not results:
        raise ProtocolError("classify needs at least one result")
    use = use or ("test" if protocol_class(k).generalization else "final")
    return classify([r.improvement(use) for r in results], [r.n for r in results], k, threshold,
                    f"{use} improvement >= {threshold:.2f}")


def final_improvement(initial: float, run_times: Sequence[float], window: int = FINAL_WINDOW) -> float:
    """Mean of the last ``window`` run times against the initial run time."""
    return improvement(initial, float(np.mean(run_times[-window:])))


def trial_instances(cls: ProtocolClass, dist: DistributionSpec, master: int, trial: int,
                    pinned_instance: dict | None = None) -> tuple[TaskInstance, TaskInstance | None]:
    """Training instance and, for generalization classes, the test instance.

    Test instances come from the dedicated test-workload stream: trial 0's
    for fixed classes, the trial's own for randomized classes.
    """
    if pinned_instance is not None:
        train_inst = TaskInstance.from_provenance(pinned_instance, cls.workload_mode)
    elif cls.randomized_workload:
        train_inst = sample_instance("randomized-blackbox", dist, derive_stream(master, trial, "workload"))
    else:
        train_inst = sample_instance("fixed-blackbox", dist)
    train_inst = replace(train_inst, mode=cls.workload_mode)
    if not cls.generalization:
        return train_inst, None
    test_mode = "randomized-out-of-dist" if "out-of-dist" in cls.workload_mode else "randomized-in-dist"
    test_trial = trial if cls.randomized_workload else 0
    try:
        test_inst = sample_instance(test_mode, dist, derive_stream(master, test_trial, "test-workload"))
    except EnvError as e:
        raise ProtocolError(str(e)) from e
    return train_inst, replace(test_inst, mode=cls.workload_mode)


def trial_seed_keys(cls: ProtocolClass, master: int, trial: int,
                    pinned_optimization: tuple[int, int] = (PINNED_SEED, 0)) -> dict[str, list[int]]:
    """Stream keys per role; C0 shares one pinned set of optimization streams across trials."""
    # fixed-workload classes share trial 0's workload keys, like their instances
    wt = trial if cls.randomized_workload else 0
    keys = {"workload": stream_key(master, wt, "workload"),
            "test-workload": stream_key(master, wt, "test-workload")}
    opt_master, opt_trial = (pinned_optimization if cls.optimization_seed_mode == FIXED else (master, trial))
    for role in OPTIMIZATION_ROLES:
        keys[role] = stream_key(opt_master, opt_trial, role)
    return keys


def run_trial(cls: ProtocolClass, trial: int, *, dist: DistributionSpec, devices: DeviceSet,
              grouper_cfg: AgentConfig, placer_cfg: AgentConfig, budget: int, master_seed: int,
              pinned_optimization: tuple[int, int] = (PINNED_SEED, 0), pinned_instance: dict | None = None,
              penalty: float = INVALID_PENALTY, reward_scale: float | None = None,
              reward_mode: str = INCREMENTAL, patience: int | None = None,
              final_window: int = FINAL_WINDOW) -> TrialResult:
    if budget < 1:
        raise ProtocolError("budget must be at least one graph evaluation")
    keys = trial_seed_keys(cls, master_seed, trial, pinned_optimization)
    streams = Streams(*(derive_stream(*keys[r][:2], r) for r in OPTIMIZATION_ROLES))
    train_inst, test_inst = trial_instances(cls, dist, master_seed, trial, pinned_instance)
    model = HierarchicalPlacer(grouper_cfg, placer_cfg, devices.names, streams.weight_init)
    log = train(model, [train_inst], devices, budget, streams, penalty=penalty, reward_scale=reward_scale,
                reward_mode=reward_mode, patience=patience)
    initial = log.initial_run_times[0]
    run_times = [s.run_time for s in log.steps]
    diverged = not all(np.isfinite(a.params.flat).all() for a in (model.grouper, model.placer))
    return TrialResult(
        trial=trial,
        seeds=keys,
        instance=train_inst.provenance(),
        instance_hash=train_inst.content_hash,
        initial_run_time=initial,
        run_times=run_times,
        valid=[s.valid for s in log.steps],
        ns=[s.n for s in log.steps],
        evaluations=log.evaluations,
        improvement_final=final_improvement(initial, run_times, final_window),
        improvement_best=improvement(initial, min(run_times)),
        improvement_greedy=greedy_improvement(model, train_inst, devices, penalty),
        improvement_test=None if test_inst is None else greedy_improvement(model, test_inst, devices, penalty),
        test_instance=None if test_inst is None else test_inst.provenance(),
        invalid_events=log.invalid_events,
        diverged=bool(diverged),
        stopped_early=log.stopped_early,
        model=model,
    )


def run_protocol_class(k: int, s: int, budget: int, *, trials: Sequence[int] | None = None,
                       on_trial: Callable[[TrialResult], None] | None = None, **setup) -> list[TrialResult]:
    """Run ``s`` trials of class ``k``; ``setup`` is forwarded to ``run_trial``.

    ``trials`` restricts the run to a subset of trial indices (for resuming).
    Results come back in trial-index order.
    """
    cls = protocol_class(k)
    if s < 1:
        raise ProtocolError("s must be >= 1")
    dist = setup.get("dist")
    if "out-of-dist" in cls.workload_mode and (dist is None or dist.held_out_family is None):
        raise ProtocolError(f"C{k} needs a held-out family")
    results = []
    for t in sorted(range(s) if trials is None else trials):
        r = run_trial(cls, t, budget=budget, **setup)
        if on_trial:
            on_trial(r)
        results.append(r)
    return results


# --------------------------------------------------- cross-graph evaluation

def generalization_matrix(models: Sequence[HierarchicalPlacer | None], instances: Sequence[TaskInstance],
                          devices: DeviceSet, penalty: float = INVALID_PENALTY) -> np.ndarray:
    """Greedy improvement of model i on instance j; NaN marks a cell that could not be evaluated."""
    out = np.full((len(models), len(instances)), np.nan)
    for i, model in enumerate(models):
        if model is None:
            continue
        for j, inst in enumerate(instances):
            try:
                out[i, j] = greedy_improvement(model, inst, devices, penalty)
            except (ValueError, EnvError):
                pass
    return out


def initial_placement_improvement(instance: TaskInstance, devices: DeviceSet) -> float:
    """Improvement of the initial placement over itself, i.e. zero; used as a sanity row."""
    g = instance.comp_graph
    rt = simulate_runtime(g, Placement.single_device(g.num_ops), devices).run_time
    return improvement(rt, rt)


def de_escalate(result: TrialResult, k: int, config: Mapping, s: int = 10) -> dict:
    """Config one class down that replays the failing trial's workload.

    Returns a copy of ``config`` (an experiment config dict) with the class
    lowered, ``s`` trials and the instance pinned.  Stepping down to C0 also
    pins the failing trial's optimization streams.
    """
    if k <= 0:
        raise ProtocolError("C0 cannot be de-escalated")
    protocol_class(k)
    if not result.instance or "seed" not in result.instance:
        raise ProtocolError("failed trial has no workload provenance")
    out = dict(config)
    out["protocol_class"] = k - 1
    out["trials"] = s
    out["pinned_instance"] = dict(result.instance)
    if k - 1 == 0:
        key = result.seeds["weight-init"]
        out["pinned_optimization"] = [key[0], key[1]]
    return out


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std())


def is_close_fraction(f: float, s: int) -> bool:
    return math.isclose(f * s, round(f * s), abs_tol=1e-9)
