import numpy as np
import pytest

from tasklab.graphs import CompGraph, Op


def chain(n: int, cost: float = 1.0, out_bytes: int = 0, mem: int = 0) -> CompGraph:
    ops = [Op(i, "dense", cost, out_bytes, mem) for i in range(n)]
    return CompGraph(ops, [(i, i + 1) for i in range(n - 1)])


def random_dag(rng: np.random.Generator, max_ops: int = 10, p: float = 0.3) -> CompGraph:
    n = int(rng.integers(1, max_ops + 1))
    ops = [Op(i, "dense", float(rng.integers(1, 9)) / 8, int(rng.integers(0, 5000)), int(rng.integers(0, 100)))
           for i in range(n)]
    edges = [(a, b) for b in range(n) for a in range(b) if rng.random() < p]
    return CompGraph(ops, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def run_bandit(seed: int, updates: int = 200, pulls: int = 8, target: float = 0.9):
    """2-armed Gaussian bandit (means 0.5 and 1.0, sd 1); returns the update at
    which P(optimal arm) first reaches ``target``, or None."""
    from tasklab.agents import nets
    from tasklab.agents.hierarchical import GROUPER_NET
    from tasklab.agents.ppo import AgentConfig, Batch, PPOAgent, log_softmax

    rng = np.random.default_rng(seed)
    cfg = AgentConfig(num_groups=2, layer_size=8, update_iterations=4, lr_start=3e-3, lr_end=1e-3,
                      linear_decay_steps=updates)
    agent = PPOAgent(cfg, nets.PolicyParams(nets.grouper_layout(1, 2, 8, 2)).init_uniform(rng), GROUPER_NET)
    x = np.ones((pulls, 1))
    for u in range(updates):
        a, logp, v = agent.act(x, rng)
        r = np.where(a == 1, 1.0, 0.5) + rng.normal(size=pulls)
        agent.update(Batch(x, a, logp, r - v, r), rng)
        p = np.exp(log_softmax(agent.net.forward(x[:1], agent.params)[0]))[0, 1]
        if p >= target:
            return u + 1
    return None


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
