"""Grouper and placer networks with hand-written backward passes.

Each network is a pair: a policy producing logits and a value network of
the same shape producing a scalar baseline.  Every forward returns a
cache that the matching backward consumes; gradients come back as a flat
vector aligned with ``PolicyParams.flat``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ParamLayout:
    entries: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.entries)

    def slices(self) -> dict[str, tuple[slice, tuple[int, ...]]]:
        out, off = {}, 0
        for name, shape in self.entries:
            n = int(np.prod(shape))
            out[name] = (slice(off, off + n), shape)
            off += n
        return out


class PolicyParams:
    """Flat parameter vector with named per-layer views."""

    def __init__(self, layout: ParamLayout, flat: np.ndarray | None = None):
        self.layout = layout
        self.flat = np.zeros(layout.size) if flat is None else np.asarray(flat, dtype=float).copy()
        if self.flat.shape != (layout.size,):
            raise ShapeError(f"expected {layout.size} parameters, got {self.flat.shape}")
        self._slices = layout.slices()

    def __getitem__(self, name: str) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.flat[sl].reshape(shape)

    def names(self) -> list[str]:
        return [n for n, _ in self.layout.entries]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.layout, self.flat)

    def with_flat(self, flat: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.layout, flat)

    def pack(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.layout.size)
        for name, g in grads.items():
            sl, shape = self._slices[name]
            out[sl] = np.asarray(g).reshape(-1)
        return out

    def to_dict(self) -> dict:
        return {"layout": [[n, list(s)] for n, s in self.layout.entries], "flat": self.flat.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        layout = ParamLayout(tuple((n, tuple(s)) for n, s in d["layout"]))
        return cls(layout, np.array(d["flat"], dtype=float))

    def init_uniform(self, rng: np.random.Generator) -> "PolicyParams":
        """Every tensor uniform in +-1/sqrt(fan_in); a bias uses its layer's weight fan-in."""
        flat = np.empty(self.layout.size)
        fan_in = {}
        for name, shape in self.layout.entries:
            if len(shape) == 2:
                fan_in[name.rsplit(".", 1)[0]] = shape[0]
        for name, shape in self.layout.entries:
            sl, _ = self._slices[name]
            f = shape[0] if len(shape) == 2 else fan_in.get(name.rsplit(".", 1)[0], shape[0])
            bound = 1.0 / np.sqrt(f)
            flat[sl] = rng.uniform(-bound, bound, size=sl.stop - sl.start)
        return self.with_flat(flat)


def _dtanh(y):
    return 1.0 - y * y


# ---------------------------------------------------------------- grouper
#
# Policy and value are separate networks of identical shape ("pi." and
# "vf." prefixes).  A shared trunk let the value loss, whose target is the
# same for every op of an episode, flatten the op representations and
# collapse all ops into one group.

def _mlp_entries(prefix: str, in_dim: int, hidden: int, num_layers: int, out_dim: int):
    entries = []
    prev = in_dim
    for i in range(num_layers):
        entries += [(f"{prefix}.h{i}.w", (prev, hidden)), (f"{prefix}.h{i}.b", (hidden,))]
        prev = hidden
    entries += [(f"{prefix}.out.w", (prev, out_dim)), (f"{prefix}.out.b", (out_dim,))]
    return entries


def grouper_layout(in_dim: int, num_groups: int, hidden: int = 32, num_layers: int = 2) -> ParamLayout:
    return ParamLayout(tuple(_mlp_entries("pi", in_dim, hidden, num_layers, num_groups)
                             + _mlp_entries("vf", in_dim, hidden, num_layers, 1)))


def _num_hidden(params: PolicyParams, prefix: str) -> int:
    return sum(1 for n in params.names() if n.startswith(prefix + ".h") and n.endswith(".w"))


def _mlp_forward(x, params, prefix):
    acts = [x]
    h = x
    for i in range(_num_hidden(params, prefix)):
        h = np.tanh(h @ params[f"{prefix}.h{i}.w"] + params[f"{prefix}.h{i}.b"])
        acts.append(h)
    return h @ params[f"{prefix}.out.w"] + params[f"{prefix}.out.b"], acts


def _mlp_backward(acts, params, prefix, dout, g):
    h = acts[-1]
    g[f"{prefix}.out.w"] = h.T @ dout
    g[f"{prefix}.out.b"] = dout.sum(axis=0)
    dh = dout @ params[f"{prefix}.out.w"].T
    for i in reversed(range(_num_hidden(params, prefix))):
        dz = dh * _dtanh(acts[i + 1])
        g[f"{prefix}.h{i}.w"] = acts[i].T @ dz
        g[f"{prefix}.h{i}.b"] = dz.sum(axis=0)
        dh = dz @ params[f"{prefix}.h{i}.w"].T


def grouper_forward(x: np.ndarray, params: PolicyParams):
    """Dense tanh networks -> (logits ``[N, num_groups]``, values ``[N]``, cache)."""
    x = np.asarray(x, dtype=float)
    width = params["pi.h0.w"].shape[0]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"grouper expects features of width {width}, got {x.shape}")
    logits, pi_acts = _mlp_forward(x, params, "pi")
    values, vf_acts = _mlp_forward(x, params, "vf")
    return logits, values[:, 0], (pi_acts, vf_acts)


def grouper_backward(cache, params: PolicyParams, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
    pi_acts, vf_acts = cache
    g = {}
    _mlp_backward(pi_acts, params, "pi", dlogits, g)
    _mlp_backward(vf_acts, params, "vf", dvalues[:, None], g)
    return params.pack(g)


# ----------------------------------------------------------------- placer

def _gnn_entries(prefix: str, in_dim: int, width: int, out_dim: int):
    return [
        (f"{prefix}.embed.w", (in_dim, width)), (f"{prefix}.embed.b", (width,)),
        (f"{prefix}.self.w", (width, width)), (f"{prefix}.in.w", (width, width)),
        (f"{prefix}.out.w", (width, width)), (f"{prefix}.agg.b", (width,)),
        (f"{prefix}.head.w", (width, out_dim)), (f"{prefix}.head.b", (out_dim,)),
    ]


def placer_layout(in_dim: int, num_devices: int, width: int) -> ParamLayout:
    return ParamLayout(tuple(_gnn_entries("pi", in_dim, width, num_devices) + _gnn_entries("vf", in_dim, width, 1)))


def neighbor_matrix(neighbors: np.ndarray, num_nodes: int) -> np.ndarray:
    """Row-normalised adjacency from sentinel-padded neighbour ids.

    Built from the neighbour *set*, so reordering a row leaves the matrix,
    and therefore every downstream value, bit-identical.
    """
    neighbors = np.asarray(neighbors)
    if neighbors.size and (neighbors.max() >= num_nodes or neighbors.min() < -1):
        raise ShapeError(f"neighbour index out of range for {num_nodes} nodes")
    a = np.zeros((neighbors.shape[0], num_nodes))
    for i, row in enumerate(neighbors):
        ids = np.unique(row[row >= 0])
        if ids.size:
            a[i, ids] = 1.0 / ids.size
    return a


@dataclass
class PlacerInput:
    features: np.ndarray  # [T, M, F]
    a_in: np.ndarray  # [T, M, M]
    a_out: np.ndarray  # [T, M, M]
    current: np.ndarray  # [T]

    @classmethod
    def stack(cls, items: list["PlacerInput"]) -> "PlacerInput":
        return cls(
            np.concatenate([i.features for i in items]),
            np.concatenate([i.a_in for i in items]),
            np.concatenate([i.a_out for i in items]),
            np.concatenate([i.current for i in items]),
        )

    def __len__(self) -> int:
        return self.features.shape[0]

    def take(self, idx) -> "PlacerInput":
        return PlacerInput(self.features[idx], self.a_in[idx], self.a_out[idx], self.current[idx])


def placer_input(state: dict, extra_features: np.ndarray | None = None) -> PlacerInput:
    """Single-sample input from a converted graph state plus optional per-node features."""
    emb = np.asarray(state["embeddings"], dtype=float)
    m = emb.shape[0]
    feats = emb if extra_features is None else np.concatenate([emb, extra_features], axis=1)
    return PlacerInput(
        feats[None],
        neighbor_matrix(state["in_neighbors"], m)[None],
        neighbor_matrix(state["out_neighbors"], m)[None],
        np.array([int(state["current_node_num"])]),
    )


def _gnn_forward(inp: PlacerInput, params, prefix: str, rounds: int):
    es = [np.tanh(inp.features @ params[f"{prefix}.embed.w"] + params[f"{prefix}.embed.b"])]
    mins, mouts = [], []
    for _ in range(rounds):
        e = es[-1]
        m_in = inp.a_in @ e
        m_out = inp.a_out @ e
        z = (e @ params[f"{prefix}.self.w"] + m_in @ params[f"{prefix}.in.w"]
             + m_out @ params[f"{prefix}.out.w"] + params[f"{prefix}.agg.b"])
        es.append(np.tanh(z))
        mins.append(m_in)
        mouts.append(m_out)
    h = es[-1][np.arange(len(inp)), inp.current]
    out = h @ params[f"{prefix}.head.w"] + params[f"{prefix}.head.b"]
    return out, (es, mins, mouts, h)


def _gnn_backward(inp: PlacerInput, cache, params, prefix: str, dout: np.ndarray, g: dict) -> None:
    es, mins, mouts, h = cache
    g[f"{prefix}.head.w"] = h.T @ dout
    g[f"{prefix}.head.b"] = dout.sum(axis=0)
    de = np.zeros_like(es[-1])
    de[np.arange(len(inp)), inp.current] = dout @ params[f"{prefix}.head.w"].T
    w = es[0].shape[2]
    gs, gi, go, gb = np.zeros((w, w)), np.zeros((w, w)), np.zeros((w, w)), np.zeros(w)
    a_in_t = np.swapaxes(inp.a_in, 1, 2)
    a_out_t = np.swapaxes(inp.a_out, 1, 2)
    w_self, w_in, w_out = params[f"{prefix}.self.w"], params[f"{prefix}.in.w"], params[f"{prefix}.out.w"]
    for r in reversed(range(len(mins))):
        dz = de * _dtanh(es[r + 1])
        flat_dz = dz.reshape(-1, w)
        gs += es[r].reshape(-1, w).T @ flat_dz
        gi += mins[r].reshape(-1, w).T @ flat_dz
        go += mouts[r].reshape(-1, w).T @ flat_dz
        gb += flat_dz.sum(axis=0)
        de = dz @ w_self.T + a_in_t @ (dz @ w_in.T) + a_out_t @ (dz @ w_out.T)
    g[f"{prefix}.self.w"], g[f"{prefix}.in.w"], g[f"{prefix}.out.w"], g[f"{prefix}.agg.b"] = gs, gi, go, gb
    dz0 = de * _dtanh(es[0])
    f = inp.features.shape[2]
    g[f"{prefix}.embed.w"] = inp.features.reshape(-1, f).T @ dz0.reshape(-1, w)
    g[f"{prefix}.embed.b"] = dz0.reshape(-1, w).sum(axis=0)


def placer_forward(inp: PlacerInput, params: PolicyParams, rounds: int):
    """Neighbourhood-aggregating embedding, then device logits for the current node.

    Each round mixes a node's embedding with the mean embedding of its in-
    and out-neighbours through tanh; the current node's final embedding
    feeds a linear head.  The value network has the same shape.
    """
    width = params["pi.embed.w"].shape[0]
    if inp.features.ndim != 3 or inp.features.shape[2] != width:
        raise ShapeError(f"placer expects node features of width {width}, got {inp.features.shape}")
    logits, pi_cache = _gnn_forward(inp, params, "pi", rounds)
    values, vf_cache = _gnn_forward(inp, params, "vf", rounds)
    return logits, values[:, 0], (inp, pi_cache, vf_cache)


def placer_backward(cache, params: PolicyParams, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
    inp, pi_cache, vf_cache = cache
    g = {}
    _gnn_backward(inp, pi_cache, params, "pi", dlogits, g)
    _gnn_backward(inp, vf_cache, params, "vf", dvalues[:, None], g)
    return params.pack(g)
