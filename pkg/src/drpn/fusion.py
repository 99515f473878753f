"""Fusion nets, click score and the (l_k + 1)-way softmax loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import GatedAggParams, gated_aggregate, with_placeholder
from .numerics import ParamSpec, ParamStore, Tensor

TERMS = ("ps", "ns", "ph", "nh")  # p_s, n_s, p_h, n_h


@dataclass
class ScorerHead:
    w1: Tensor  # (2d, d)
    b1: Tensor  # (d,)
    w2: Tensor  # (d, 1)
    b2: Tensor  # (1,)


@dataclass
class FusionNetParams:
    agg: GatedAggParams
    heads: dict[str, ScorerHead]

    @staticmethod
    def specs(prefix: str, d: int, d_att: int) -> list[ParamSpec]:
        out = GatedAggParams.specs(f"{prefix}.agg", d, d_att)
        for t in TERMS:
            out += [ParamSpec(f"{prefix}.{t}.w1", (2 * d, d)), ParamSpec(f"{prefix}.{t}.b1", (d,), "bias"),
                    ParamSpec(f"{prefix}.{t}.w2", (d, 1)), ParamSpec(f"{prefix}.{t}.b2", (1,), "bias")]
        return out

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> "FusionNetParams":
        heads = {t: ScorerHead(*(store[f"{prefix}.{t}.{n}"] for n in ("w1", "b1", "w2", "b2"))) for t in TERMS}
        return cls(GatedAggParams.from_store(store, f"{prefix}.agg"), heads)


def _expand(x: Tensor, like_ndim: int) -> Tensor:
    """Insert a candidate axis before the feature axis when ``x`` lacks one."""
    if x.ndim == like_ndim:
        return x
    return nx.reshape(x, (*x.shape[:-1], 1, x.shape[-1]))


def pair_context(pos, neg, pos_mask, neg_mask, cand, agg: GatedAggParams) -> Tensor:
    """[Aggregate(P | N) ; r_c] for each candidate; shape (..., C, 2d) or (..., 2d)."""
    cand = nx.as_tensor(cand)
    seq = nx.concat_rows([pos, neg])
    mask = with_placeholder(np.concatenate([np.asarray(pos_mask, bool), np.asarray(neg_mask, bool)], axis=-1))
    u = _expand(gated_aggregate(seq, agg, mask), cand.ndim)
    u = nx.add(u, np.zeros(cand.shape))
    return nx.concat_cols([u, cand])


def fusion_weight(f, head: ScorerHead) -> Tensor:
    """tanh(f W_1 + b_1) W_2 + b_2, unnormalized; shape (..., 1)."""
    return nx.tanh(nx.as_tensor(f) @ head.w1 + head.b1) @ head.w2 + head.b2


def fusion_weights(f, params: FusionNetParams, terms=TERMS) -> dict[str, Tensor]:
    return {t: fusion_weight(f, params.heads[t]) for t in terms}


def fuse_user(vectors: dict[str, Tensor], weights: dict[str, Tensor]) -> Tensor:
    """Weighted sum of the interest vectors present in ``vectors``."""
    out = None
    for t, v in vectors.items():
        w = weights[t]
        term = _expand(nx.as_tensor(v), w.ndim) * w
        out = term if out is None else out + term
    if out is None:
        raise ValueError("fuse_user: no interest vectors")
    return out


def dot(a, b) -> Tensor:
    return nx.sum(nx.as_tensor(a) * b, axis=-1)


def predict(u_t, cand_t, u_o=None, cand_o=None) -> Tensor:
    """u^t . r_c^t + u^o . r_c^o; the graph term is dropped when ``u_o`` is None."""
    score = dot(u_t, cand_t)
    if u_o is not None:
        score = score + dot(u_o, cand_o)
    return score


def sample_losses(scores) -> Tensor:
    """Per-sample -log softmax of column 0 over (positive, negatives...) scores."""
    scores = nx.as_tensor(scores)
    return nx.logsumexp(scores, axis=-1) - scores[..., 0]


def training_loss(scores) -> Tensor:
    """Mean over samples of the (l_k + 1)-way softmax cross-entropy.

    ``scores`` has shape (batch, 1 + l_k) with the clicked news first.
    """
    scores = nx.as_tensor(scores)
    if scores.ndim == 1:
        scores = nx.reshape(scores, (1, scores.shape[0]))
    return nx.mean(sample_losses(scores))
