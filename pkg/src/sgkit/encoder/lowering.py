"""Scene graph -> node/edge arrays for message passing.

Object nodes come in item_id order, each followed by its attribute nodes.
Attribute edges (object -> attribute) precede relation edges; a relation
phrase of k words contributes k parallel edges between its two objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..model import DanglingReferenceError, SceneGraph
from .backends import EmbeddingBackend

ATTRIBUTE_EDGE_TEXT = "has attribute"


class EdgeSource(NamedTuple):
    kind: str  # "relation" | "attribute"
    key: int  # triple_id or item_id
    index: int  # word index or attribute index


@dataclass
class LoweredGraph:
    features: np.ndarray  # (N, D)
    node_kind: list[str]
    node_source: list  # item_id, or (item_id, attribute_index)
    edge_src: np.ndarray  # (E,) int64
    edge_dst: np.ndarray
    edge_features: np.ndarray  # (E, D)
    edge_source: list[EdgeSource]
    triple_index: dict[int, tuple[int, int, tuple[int, ...]]]
    object_node: dict[int, int]

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_src.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def lower(graph: SceneGraph, backend: EmbeddingBackend) -> LoweredGraph:
    dim = backend.dim
    feats, kinds, sources = [], [], []
    src, dst, efeats, esources = [], [], [], []
    object_node: dict[int, int] = {}
    for it in sorted(graph.items, key=lambda i: i.item_id):
        if it.item_id in object_node:
            continue
        obj = len(feats)
        object_node[it.item_id] = obj
        feats.append(backend.embed(it.label))
        kinds.append("object")
        sources.append(it.item_id)
        for j, attr in enumerate(it.attributes):
            node = len(feats)
            feats.append(backend.embed(attr))
            kinds.append("attribute")
            sources.append((it.item_id, j))
            src.append(obj)
            dst.append(node)
            efeats.append(backend.embed(ATTRIBUTE_EDGE_TEXT))
            esources.append(EdgeSource("attribute", it.item_id, j))

    triple_index: dict[int, tuple[int, int, tuple[int, ...]]] = {}
    for rel in sorted(graph.relations, key=lambda r: r.triple_id):
        for ref in (rel.item1, rel.item2):
            if ref not in object_node:
                raise DanglingReferenceError(rel.triple_id, ref)
        s, o = object_node[rel.item1], object_node[rel.item2]
        edges = []
        for w, word in enumerate(rel.relation.split()):
            edges.append(len(src))
            src.append(s)
            dst.append(o)
            efeats.append(backend.embed(word))
            esources.append(EdgeSource("relation", rel.triple_id, w))
        triple_index[rel.triple_id] = (s, o, tuple(edges))

    def stack(rows):
        return np.array(rows, dtype=np.float64).reshape(len(rows), dim)

    return LoweredGraph(
        features=stack(feats),
        node_kind=kinds,
        node_source=sources,
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        edge_features=stack(efeats),
        edge_source=esources,
        triple_index=triple_index,
        object_node=object_node,
    )


def permute_nodes(lowered: LoweredGraph, perm) -> LoweredGraph:
    """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return LoweredGraph(
        features=lowered.features[perm],
        node_kind=[lowered.node_kind[p] for p in perm],
        node_source=[lowered.node_source[p] for p in perm],
        edge_src=inv[lowered.edge_src],
        edge_dst=inv[lowered.edge_dst],
        edge_features=lowered.edge_features,
        edge_source=list(lowered.edge_source),
        triple_index={t: (int(inv[s]), int(inv[o]), e) for t, (s, o, e) in lowered.triple_index.items()},
        object_node={k: int(inv[v]) for k, v in lowered.object_node.items()},
    )
