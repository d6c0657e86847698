"""Scene-graph embedding: refined triple vectors followed by single objects.

For each triple ``vector = embed(triple text) + alpha * e_r`` where ``e_r`` is
the mean of the final states of its two object nodes and its word edges;
each single object contributes ``embed(label)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import Item, SceneGraph, single_objects, triples
from .backends import EmbeddingBackend
from .gnn import EncoderParams, GnnOutput, gnn_backward, gnn_forward
from .lowering import LoweredGraph, lower


@dataclass
class SgEmbedding:
    vectors: np.ndarray  # (n_triples + n_singles, D)
    provenance: list[tuple[str, int]]  # ("t", triple_id) | ("s", item_id)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_triples(self) -> int:
        return sum(1 for kind, _ in self.provenance if kind == "t")

    def tags(self) -> list[str]:
        return [f"{k}{i}" for k, i in self.provenance]


def render_triple(subject: Item, relation: str, obj: Item, include_attributes: bool = True) -> str:
    parts = []
    if include_attributes:
        parts += subject.attributes
    parts += [subject.label, relation]
    if include_attributes:
        parts += obj.attributes
    parts.append(obj.label)
    return " ".join(p.strip() for p in parts if p.strip())


def _constituents(lowered: LoweredGraph, triple_id: int):
    if triple_id not in lowered.triple_index:
        raise KeyError(f"unknown triple_id {triple_id}")
    s, o, edges = lowered.triple_index[triple_id]
    nodes = (s,) if s == o else (s, o)
    return nodes, edges


def refine_triples(lowered: LoweredGraph, states: GnnOutput | tuple) -> dict[int, np.ndarray]:
    """Mean of the final states of a triple's object nodes and word edges."""
    h, e = (states.node_states, states.edge_states) if isinstance(states, GnnOutput) else states
    out = {}
    for tid in lowered.triple_index:
        nodes, edges = _constituents(lowered, tid)
        rows = [h[k] for k in nodes] + [e[k] for k in edges]
        out[tid] = np.mean(rows, axis=0)
    return out


@dataclass
class _Inputs:
    """Everything the forward pass needs that does not depend on parameters."""

    lowered: LoweredGraph
    triple_ids: list[int]
    triple_emb: np.ndarray  # (T, D)
    single_ids: list[int]
    single_emb: np.ndarray  # (S, D)


def prepare(graph: SceneGraph, backend: EmbeddingBackend, include_attributes: bool = True) -> _Inputs:
    lowered = lower(graph, backend)
    rels = sorted(graph.relations, key=lambda r: r.triple_id)
    texts = [render_triple(s, r, o, include_attributes) for s, r, o in triples(graph)]
    singles = single_objects(graph)
    d = backend.dim
    t_emb = np.array([backend.embed(t) for t in texts], dtype=np.float64).reshape(len(texts), d)
    s_emb = np.array([backend.embed(it.label) for it in singles], dtype=np.float64).reshape(len(singles), d)
    return _Inputs(lowered, [r.triple_id for r in rels], t_emb, [it.item_id for it in singles], s_emb)


@dataclass
class _Forward:
    embedding: SgEmbedding
    gnn: GnnOutput
    refined: np.ndarray = field(repr=False)  # (T, D)


def _forward(inputs: _Inputs, params: EncoderParams) -> _Forward:
    out = gnn_forward(inputs.lowered, params)
    ref = refine_triples(inputs.lowered, out)
    d = inputs.lowered.dim
    refined = np.array([ref[t] for t in inputs.triple_ids], dtype=np.float64).reshape(len(inputs.triple_ids), d)
    vectors = np.concatenate([inputs.triple_emb + params.alpha * refined, inputs.single_emb], axis=0)
    prov = [("t", t) for t in inputs.triple_ids] + [("s", i) for i in inputs.single_ids]
    return _Forward(SgEmbedding(vectors, prov), out, refined)


def _backward(inputs: _Inputs, params: EncoderParams, fwd: _Forward, g_vectors: np.ndarray):
    """Gradient of a scalar w.r.t. alpha and layer weights given d/d(vectors)."""
    n_t = len(inputs.triple_ids)
    g_t = g_vectors[:n_t]
    g_alpha = float(np.sum(g_t * fwd.refined))
    g_refined = params.alpha * g_t
    lw = inputs.lowered
    gh = np.zeros_like(fwd.gnn.node_states)
    ge = np.zeros_like(fwd.gnn.edge_states)
    for row, tid in enumerate(inputs.triple_ids):
        nodes, edges = _constituents(lw, tid)
        share = g_refined[row] / (len(nodes) + len(edges))
        for k in nodes:
            gh[k] += share
        for k in edges:
            ge[k] += share
    layer_grads, _, _ = gnn_backward(lw, params, fwd.gnn, gh, ge)
    return g_alpha, layer_grads


def assemble(graph: SceneGraph, backend: EmbeddingBackend, params: EncoderParams,
             include_attributes: bool = True) -> SgEmbedding:
    return _forward(prepare(graph, backend, include_attributes), params).embedding
