"""One-layer graph transformer over the co-click graph, and the collaborative interest encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import _merge_heads, _split_heads
from .ingest import CollabGraph
from .interest import InterestBundle, InterestEncoderParams, encode_interests
from .numerics import ParamSpec, ParamStore, Tensor


@dataclass
class GraphLayerParams:
    w1: Tensor  # (d, d): column block m is head m's center projection
    w2: Tensor  # neighbor key projection
    w3: Tensor  # neighbor value projection
    wf1: Tensor  # (2d, d) gate
    wf2: Tensor  # (2d, d) candidate
    heads: int

    @staticmethod
    def specs(prefix: str, d: int) -> list[ParamSpec]:
        return ([ParamSpec(f"{prefix}.w{i}", (d, d)) for i in (1, 2, 3)]
                + [ParamSpec(f"{prefix}.wf{i}", (2 * d, d)) for i in (1, 2)])

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, heads: int) -> "GraphLayerParams":
        return cls(*(store[f"{prefix}.{n}"] for n in ("w1", "w2", "w3", "wf1", "wf2")), heads=heads)


@dataclass
class NeighborTable:
    """Dense top-k neighbor lists indexed by news row."""
    index: np.ndarray  # (n_rows, k) int, 0 where empty
    mask: np.ndarray  # (n_rows, k) bool

    @classmethod
    def from_graph(cls, graph: CollabGraph, rows: dict[str, int], n_rows: int, k: int) -> "NeighborTable":
        index = np.zeros((n_rows, k), dtype=np.int64)
        mask = np.zeros((n_rows, k), dtype=bool)
        for nid, nbrs in graph.neighbors.items():
            r = rows.get(nid)
            if r is None:
                continue
            kept = [rows[m] for m, _ in nbrs if m in rows][:k]
            index[r, :len(kept)] = kept
            mask[r, :len(kept)] = True
        return cls(index, mask)

    def degree(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def _check_heads(d: int, heads: int) -> None:
    if d % heads:
        raise ValueError(f"graph layer: width {d} not divisible by {heads} heads")


def neighbor_attention(center, neighbors, params: GraphLayerParams, mask=None) -> Tensor:
    """Per-head attention of each node over its neighbors: shape (..., heads, k).

    Nodes without a real neighbor get all-zero weights.
    """
    center, neighbors = nx.as_tensor(center), nx.as_tensor(neighbors)
    d = center.shape[-1]
    _check_heads(d, params.heads)
    q = _split_heads(nx.reshape(center, (*center.shape[:-1], 1, d)) @ params.w1, params.heads)
    k = _split_heads(neighbors @ params.w2, params.heads)
    scores = nx.scalar_mul(q @ nx.transpose(k), 1.0 / np.sqrt(d // params.heads))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[..., None, None, :]
    w = nx.softmax(scores, mask)
    return nx.reshape(w, (*w.shape[:-2], w.shape[-1]))


def neighbor_aggregate(center, neighbors, params: GraphLayerParams, mask=None, return_weights: bool = False):
    """Concatenation over heads of the attention-weighted projected neighbors."""
    neighbors = nx.as_tensor(neighbors)
    w = neighbor_attention(center, neighbors, params, mask)
    v = _split_heads(neighbors @ params.w3, params.heads)
    out = nx.reshape(w, (*w.shape[:-1], 1, w.shape[-1])) @ v  # (..., H, 1, dh)
    out = _merge_heads(out)
    out = nx.reshape(out, (*out.shape[:-2], out.shape[-1]))
    return (out, w) if return_weights else out


def fuse_node(r, r_hat, params: GraphLayerParams) -> Tensor:
    x = nx.concat_cols([r, r_hat])
    return nx.sigmoid(x @ params.wf1) * nx.tanh(x @ params.wf2)


def encode_graph_sequence(rows, table: NeighborTable, id_emb: Tensor, params: GraphLayerParams) -> Tensor:
    """Graph-encode news rows of any shape; output has shape rows.shape + (d,).

    Isolated nodes (including PAD and UNK) fuse with a zero aggregate.
    """
    rows = np.asarray(rows, dtype=np.int64)
    r = nx.take(id_emb, rows)
    nbrs = nx.take(id_emb, table.index[rows])
    r_hat = neighbor_aggregate(r, nbrs, params, table.mask[rows])
    return fuse_node(r, r_hat, params)


def encode_collab_interests(pos, neg, pos_mask, neg_mask, params: InterestEncoderParams, **flags) -> InterestBundle:
    """Collaborative view: inputs are graph-encoded ID vectors, pooling without self-attention."""
    if params.ca_pos.mh is not None:
        raise ValueError("collaborative interest encoder pools without self-attention")
    return encode_interests(pos, neg, pos_mask, neg_mask, params, **flags)
