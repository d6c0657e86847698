"""Residual mean-aggregation message passing, forward and reverse mode.

Per layer, with node states ``h`` (N, D) and edge states ``e`` (E, D):

    every edge (s -> d) sends two messages, one to each endpoint:
        m = msg_w @ [h_sender ; e] + msg_b                    (H,)
    agg_v = mean of the messages received by v
    h_v  <- h_v + tanh(upd_w @ agg_v + upd_b)   (nodes with no edges keep h_v)
    e    <- e + tanh(edge_w @ [h_s ; h_d] + edge_b)

All weights at zero make every layer the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .lowering import LoweredGraph

LAYER_FIELDS = ("msg_w", "msg_b", "upd_w", "upd_b", "edge_w", "edge_b")


@dataclass
class LayerParams:
    msg_w: np.ndarray  # (H, 2D)
    msg_b: np.ndarray  # (H,)
    upd_w: np.ndarray  # (D, H)
    upd_b: np.ndarray  # (D,)
    edge_w: np.ndarray  # (D, 2D)
    edge_b: np.ndarray  # (D,)

    @property
    def dim(self) -> int:
        return self.upd_w.shape[0]

    @property
    def hidden(self) -> int:
        return self.msg_w.shape[0]

    def check(self):
        d, h = self.dim, self.hidden
        want = {"msg_w": (h, 2 * d), "msg_b": (h,), "upd_w": (d, h), "upd_b": (d,),
                "edge_w": (d, 2 * d), "edge_b": (d,)}
        for name, shape in want.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")


@dataclass
class EncoderParams:
    layers: list[LayerParams]
    alpha: float = 0.0

    @property
    def dim(self) -> int:
        return self.layers[0].dim if self.layers else 0

    @property
    def hidden(self) -> int:
        return self.layers[0].hidden if self.layers else 0

    def named_arrays(self):
        """``(name, array)`` for every weight, in a fixed order (alpha excluded)."""
        for i, layer in enumerate(self.layers):
            for f in LAYER_FIELDS:
                yield f"layers.{i}.{f}", getattr(layer, f)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            [LayerParams(*(getattr(l, f).copy() for f in LAYER_FIELDS)) for l in self.layers], float(self.alpha))


def init_params(dim: int, hidden: int = 512, n_layers: int = 5, seed: int = 0, scale: float = 1.0) -> EncoderParams:
    """Random layer weights (std ``scale / sqrt(fan_in)``), zero biases, alpha = 0."""
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for _ in range(n_layers):
        layers.append(LayerParams(
            msg_w=rng.standard_normal((hidden, 2 * dim)) * scale / np.sqrt(2 * dim),
            msg_b=np.zeros(hidden),
            upd_w=rng.standard_normal((dim, hidden)) * scale / np.sqrt(hidden),
            upd_b=np.zeros(dim),
            edge_w=rng.standard_normal((dim, 2 * dim)) * scale / np.sqrt(2 * dim),
            edge_b=np.zeros(dim),
        ))
    return EncoderParams(layers, 0.0)


def zero_params(dim: int, hidden: int = 512, n_layers: int = 5) -> EncoderParams:
    return EncoderParams([
        LayerParams(np.zeros((hidden, 2 * dim)), np.zeros(hidden), np.zeros((dim, hidden)),
                    np.zeros(dim), np.zeros((dim, 2 * dim)), np.zeros(dim))
        for _ in range(n_layers)
    ], 0.0)


@dataclass
class _LayerCache:
    h: np.ndarray
    x: np.ndarray
    agg: np.ndarray
    counts: np.ndarray
    t_node: np.ndarray
    mask: np.ndarray
    y: np.ndarray
    t_edge: np.ndarray


@dataclass
class GnnOutput:
    node_states: np.ndarray
    edge_states: np.ndarray
    cache: list = field(default_factory=list, repr=False)


def _incidence(lowered: LoweredGraph):
    e = lowered.n_edges
    recv = np.concatenate([lowered.edge_dst, lowered.edge_src])
    send = np.concatenate([lowered.edge_src, lowered.edge_dst])
    eid = np.concatenate([np.arange(e, dtype=np.int64)] * 2)
    return recv, send, eid


def gnn_forward(lowered: LoweredGraph, params: EncoderParams) -> GnnOutput:
    d = lowered.dim
    for layer in params.layers:
        layer.check()
        if layer.dim != d:
            raise ValueError(f"encoder dimension {layer.dim} does not match feature dimension {d}")
    n = lowered.n_nodes
    recv, send, eid = _incidence(lowered)
    h = lowered.features.copy()
    e = lowered.edge_features.copy()
    cache = []
    for layer in params.layers:
        x = np.ascontiguousarray(np.concatenate([h[send], e[eid]], axis=1))
        msgs = np.ascontiguousarray(x @ layer.msg_w.T + layer.msg_b)
        agg, counts = kernels.segment_mean(msgs, recv, n)
        mask = counts > 0
        t_node = np.tanh(agg @ layer.upd_w.T + layer.upd_b)
        t_node[~mask] = 0.0
        y = np.concatenate([h[lowered.edge_src], h[lowered.edge_dst]], axis=1)
        t_edge = np.tanh(y @ layer.edge_w.T + layer.edge_b)
        cache.append(_LayerCache(h, x, agg, counts, t_node, mask, y, t_edge))
        h = h + t_node
        e = e + t_edge
    return GnnOutput(h, e, cache)


def gnn_backward(lowered: LoweredGraph, params: EncoderParams, out: GnnOutput,
                 g_nodes: np.ndarray, g_edges: np.ndarray):
    """Gradients of a scalar w.r.t. every layer weight, given its gradient
    w.r.t. the final node and edge states.

    Returns ``(layer_grads, g_features, g_edge_features)`` where
    ``layer_grads[i]`` maps field name -> array.
    """
    n, n_e, d = lowered.n_nodes, lowered.n_edges, lowered.dim
    recv, send, eid = _incidence(lowered)
    gh = np.array(g_nodes, dtype=np.float64)
    ge = np.array(g_edges, dtype=np.float64)
    grads: list[dict] = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer, c = params.layers[i], out.cache[i]
        g_pre = gh * (1.0 - c.t_node ** 2)
        g_pre[~c.mask] = 0.0
        g_agg = g_pre @ layer.upd_w
        safe = np.maximum(c.counts, 1)
        g_msgs = g_agg[recv] / safe[recv][:, None]
        g_x = np.ascontiguousarray(g_msgs @ layer.msg_w)

        g_pre_e = ge * (1.0 - c.t_edge ** 2)
        g_y = g_pre_e @ layer.edge_w

        grads[i] = {
            "msg_w": g_msgs.T @ c.x,
            "msg_b": g_msgs.sum(axis=0),
            "upd_w": g_pre.T @ c.agg,
            "upd_b": g_pre.sum(axis=0),
            "edge_w": g_pre_e.T @ c.y,
            "edge_b": g_pre_e.sum(axis=0),
        }
        gh = (gh
              + kernels.scatter_add_rows(np.ascontiguousarray(g_x[:, :d]), send, n)
              + kernels.scatter_add_rows(np.ascontiguousarray(g_y[:, :d]), lowered.edge_src, n)
              + kernels.scatter_add_rows(np.ascontiguousarray(g_y[:, d:]), lowered.edge_dst, n))
        ge = ge + kernels.scatter_add_rows(np.ascontiguousarray(g_x[:, d:]), eid, n_e)
    return grads, gh, ge
