"""Proximal policy optimisation core: advantages, sampling, clipped updates, Adam."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .nets import PolicyParams


class AgentError(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    clip_ratio: float = 0.2
    discount: float = 1.0
    gae_lambda: float = 1.0
    batch_size: int | None = None  # None: one full pass (grouper: all ops of the graph)
    update_iterations: int = 1
    layer_size: int | None = 32  # None: width equals num_groups
    num_layers: int = 2
    activation: str = "tanh"
    lr_start: float = 3e-4
    lr_end: float = 1e-4
    linear_decay_steps: int = 1000
    num_groups: int = 20
    num_neighbors: int = 5
    aggregation_rounds: int = 10
    groups_per_evaluation: int = 10
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    advantage_norm: str = "batch"  # batch | running | none
    max_grad_norm: float | None = None
    minibatch_size: int | None = None
    episodes_per_update: int = 1  # grouper: grouping passes pooled into one update

    def __post_init__(self):
        if not 0 < self.clip_ratio < 1:
            raise AgentError(f"clip_ratio must lie in (0, 1), got {self.clip_ratio}")
        if not 0 < self.discount <= 1:
            raise AgentError(f"discount must lie in (0, 1], got {self.discount}")
        if not 0 <= self.gae_lambda <= 1:
            raise AgentError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if not self.lr_start >= self.lr_end > 0:
            raise AgentError("need lr_start >= lr_end > 0")
        if self.activation != "tanh":
            raise AgentError("only tanh activations are supported")
        if self.advantage_norm not in ("batch", "running", "none"):
            raise AgentError(f"unknown advantage_norm {self.advantage_norm!r}")
        if self.update_iterations < 1 or self.linear_decay_steps < 1 or self.episodes_per_update < 1:
            raise AgentError("update_iterations, linear_decay_steps and episodes_per_update must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise AgentError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "AgentConfig":
        return replace(self, **kw)


def grouper_config(**overrides) -> AgentConfig:
    base = AgentConfig(
        clip_ratio=0.25, discount=1.0, gae_lambda=1.0, batch_size=None,
        update_iterations=10, layer_size=32, num_layers=2,
        lr_start=0.01, lr_end=0.00001, linear_decay_steps=600, num_groups=20,
    )
    return replace(base, **overrides)


def placer_config(**overrides) -> AgentConfig:
    base = AgentConfig(
        clip_ratio=0.2, discount=1.0, gae_lambda=1.0, batch_size=10,
        update_iterations=1, layer_size=None, num_groups=20,
        num_neighbors=5, aggregation_rounds=10, groups_per_evaluation=10,
        lr_start=0.0003, lr_end=0.0001, linear_decay_steps=1000,
    )
    return replace(base, **overrides)


def learning_rate(config: AgentConfig, update: int) -> float:
    """Linear from lr_start to lr_end over linear_decay_steps updates, then flat."""
    frac = min(max(update, 0), config.linear_decay_steps) / config.linear_decay_steps
    return config.lr_start + frac * (config.lr_end - config.lr_start)


# ------------------------------------------------------------ trajectories

@dataclass
class Transition:
    state: Any
    action: int
    log_prob: float
    reward: float
    value: float
    done: bool


@dataclass
class Trajectory:
    transitions: list[Transition] = field(default_factory=list)

    def append(self, t: Transition) -> None:
        if not np.isfinite(t.reward):
            raise AgentError("non-finite reward")
        if t.log_prob > 1e-12:
            raise AgentError("log-probabilities must be <= 0")
        self.transitions.append(t)

    def __len__(self) -> int:
        return len(self.transitions)

    def arrays(self):
        tr = self.transitions
        return (np.array([t.reward for t in tr], dtype=float),
                np.array([t.value for t in tr], dtype=float),
                np.array([t.done for t in tr], dtype=bool))


def gae_advantages(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalised advantage estimates and returns (advantages + values).

    A ``done`` flag at step t cuts bootstrapping from t+1.  ``last_value``
    bootstraps after the final step when it is not terminal.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not rewards.shape == values.shape == dones.shape:
        raise AgentError(f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    T = rewards.shape[0]
    adv = np.zeros(T)
    running = 0.0
    for t in reversed(range(T)):
        if dones[t]:
            next_v, running = 0.0, 0.0
        else:
            next_v = values[t + 1] if t + 1 < T else last_value
        delta = rewards[t] + gamma * next_v - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + values


# ----------------------------------------------------------- distributions

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(logits, rng: np.random.Generator | None = None, greedy: bool = False):
    """Categorical draw from softmax(logits) -> (action, log-prob); argmax when ``greedy``."""
    logits = np.asarray(logits, dtype=float)
    logp = log_softmax(logits)
    if greedy:
        a = int(np.argmax(logits))
    else:
        if rng is None:
            raise AgentError("sampling needs a random stream")
        a = int(rng.choice(logits.shape[-1], p=np.exp(logp)))
    return a, float(logp[a])


def sample_actions(logits: np.ndarray, rng: np.random.Generator | None = None, greedy: bool = False):
    """Row-wise version of :func:`sample_action` -> (actions, log-probs)."""
    logp = log_softmax(np.asarray(logits, dtype=float))
    if greedy:
        a = np.argmax(logits, axis=1)
    else:
        if rng is None:
            raise AgentError("sampling needs a random stream")
        cdf = np.cumsum(np.exp(logp), axis=1)
        u = rng.random(logits.shape[0]) * cdf[:, -1]
        a = np.minimum((cdf < u[:, None]).sum(axis=1), logits.shape[1] - 1)
    return a.astype(np.int64), logp[np.arange(len(a)), a]


# -------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    def load_state_dict(self, d: dict) -> None:
        self.m = np.array(d["m"], dtype=float)
        self.v = np.array(d["v"], dtype=float)
        self.t = int(d["t"])


# ------------------------------------------------------------------- PPO

@dataclass(frozen=True)
class Network:
    """Forward/backward pair plus a way to index a batch of inputs."""

    forward: Callable
    backward: Callable
    take: Callable = lambda inputs, idx: inputs[idx]


@dataclass
class Batch:
    inputs: Any
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


def ppo_objective(net: Network, params: PolicyParams, batch: Batch, config: AgentConfig,
                  terms: Sequence[str] = ("policy", "value", "entropy")):
    """Loss to minimise and its gradient.

    policy:  -mean(min(ratio * A, clip(ratio, 1-eps, 1+eps) * A))
    value:   value_coef * mean((V - returns)^2)
    entropy: -entropy_coef * mean(H)
    """
    logits, values, cache = net.forward(batch.inputs, params)
    n = len(batch)
    idx = np.arange(n)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[idx, batch.actions]
    ratio = np.exp(logp - batch.log_probs)
    adv = batch.advantages
    eps = config.clip_ratio
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    surrogate = np.minimum(unclipped, clipped)
    entropy = -(probs * logp_all).sum(axis=1)

    dlogits = np.zeros_like(logits)
    dvalues = np.zeros(n)
    loss = 0.0
    if "policy" in terms:
        loss -= surrogate.mean()
        active = unclipped <= clipped
        coef = np.where(active, -adv * ratio / n, 0.0)
        onehot = np.zeros_like(logits)
        onehot[idx, batch.actions] = 1.0
        dlogits += coef[:, None] * (onehot - probs)
    if "value" in terms:
        err = values - batch.returns
        loss += config.value_coef * np.mean(err * err)
        dvalues += 2.0 * config.value_coef * err / n
    if "entropy" in terms and config.entropy_coef:
        loss -= config.entropy_coef * entropy.mean()
        dh = -probs * (logp_all + entropy[:, None])
        dlogits -= config.entropy_coef * dh / n
    grad = net.backward(cache, params, dlogits, dvalues)
    stats = {
        "loss": float(loss),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "entropy": float(entropy.mean()),
    }
    return loss, grad, stats


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    centred = adv - adv.mean()
    return centred / std if std > 1e-8 else np.zeros_like(adv)


def ppo_update(batch: Batch, params: PolicyParams, config: AgentConfig, update: int,
               net: Network, optimizer: Adam, rng: np.random.Generator | None = None):
    """``update_iterations`` Adam steps on the clipped objective -> (params, stats)."""
    if len(batch) == 0:
        raise AgentError("empty batch")
    if config.advantage_norm == "batch":
        batch = Batch(batch.inputs, batch.actions, batch.log_probs,
                      normalize_advantages(batch.advantages), batch.returns)
    lr = learning_rate(config, update)
    flat = params.flat
    stats = {}
    for _ in range(config.update_iterations):
        for idx in _minibatches(len(batch), config.minibatch_size, rng):
            sub = batch if idx is None else Batch(
                net.take(batch.inputs, idx), batch.actions[idx], batch.log_probs[idx],
                batch.advantages[idx], batch.returns[idx])
            _, grad, stats = ppo_objective(net, params.with_flat(flat), sub, config)
            if config.max_grad_norm is not None:
                norm = np.linalg.norm(grad)
                if norm > config.max_grad_norm:
                    grad = grad * (config.max_grad_norm / norm)
            flat = optimizer.step(flat, grad, lr)
    stats["lr"] = lr
    return params.with_flat(flat), stats


def _minibatches(n: int, size: int | None, rng: np.random.Generator | None):
    if size is None or size >= n:
        yield None
        return
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, size):
        yield order[start:start + size]


class RunningStd:
    """Welford accumulator used to scale advantages across batches."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, xs: np.ndarray) -> None:
        for x in np.asarray(xs, dtype=float).ravel():
            self.n += 1
            d = x - self.mean
            self.mean += d / self.n
            self.m2 += d * (x - self.mean)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.m2 / self.n)) if self.n > 1 else 1.0

    def state_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "m2": self.m2}

    def load_state_dict(self, d: dict) -> None:
        self.n, self.mean, self.m2 = int(d["n"]), float(d["mean"]), float(d["m2"])


class PPOAgent:
    """Parameters, optimiser state and update counter for one learner."""

    def __init__(self, config: AgentConfig, params: PolicyParams, net: Network):
        self.config = config
        self.params = params
        self.net = net
        self.optimizer = Adam(params.layout.size)
        self.updates = 0
        self.adv_scale = RunningStd()

    def act(self, inputs, rng: np.random.Generator | None, greedy: bool = False):
        logits, values, _ = self.net.forward(inputs, self.params)
        actions, logps = sample_actions(logits, rng, greedy)
        return actions, logps, values

    def update(self, batch: Batch, rng: np.random.Generator | None = None) -> dict:
        if self.config.advantage_norm == "running":
            self.adv_scale.update(batch.advantages)
            s = max(self.adv_scale.std, 1e-8)
            batch = Batch(batch.inputs, batch.actions, batch.log_probs, batch.advantages / s, batch.returns)
        self.params, stats = ppo_update(batch, self.params, self.config, self.updates, self.net,
                                        self.optimizer, rng)
        self.updates += 1
        return stats

    @property
    def learning_rate(self) -> float:
        return learning_rate(self.config, self.updates)
