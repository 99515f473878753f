"""Interest encoders: content-based aggregation and the denoising aggregator.

For a feedback sequence P (the one being refined) and the opposite
sequence N, each entry p_j is weighted by how well it agrees with the rest
of P (intra comparison) minus a gated measure of how well it agrees with N
(inter comparison). The negative sequence is refined by the same process
with the roles swapped and its own parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import GatedAggParams, MultiHeadParams, gated_aggregate, multi_head, residual_ln, with_placeholder
from .numerics import ParamSpec, ParamStore, Tensor

_DENOISE_MATS = ("wq", "wk", "wv", "wk2", "wv2")


@dataclass
class DenoiseParams:
    wq: Tensor  # shared by the intra and inter queries
    wk: Tensor
    wv: Tensor
    wk2: Tensor  # inter (opposite-sequence) key/value projections
    wv2: Tensor
    wu1: Tensor  # (2d, d) intra scorer
    bu1: Tensor
    wu2: Tensor  # (d, 1)
    bu2: Tensor
    wu3: Tensor  # (2d, d) inter scorer
    bu3: Tensor
    wu4: Tensor
    bu4: Tensor
    gamma: Tensor

    @staticmethod
    def specs(prefix: str, d: int) -> list[ParamSpec]:
        out = [ParamSpec(f"{prefix}.{n}", (d, d)) for n in _DENOISE_MATS]
        for a, b in (("1", "2"), ("3", "4")):
            out += [ParamSpec(f"{prefix}.wu{a}", (2 * d, d)), ParamSpec(f"{prefix}.bu{a}", (d,), "bias"),
                    ParamSpec(f"{prefix}.wu{b}", (d, 1)), ParamSpec(f"{prefix}.bu{b}", (1,), "bias")]
        out.append(ParamSpec(f"{prefix}.gamma", (1,), "gamma"))
        return out

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> "DenoiseParams":
        names = (*_DENOISE_MATS, "wu1", "bu1", "wu2", "bu2", "wu3", "bu3", "wu4", "bu4", "gamma")
        return cls(*(store[f"{prefix}.{n}"] for n in names))


def _squeeze_last(x: Tensor) -> Tensor:
    return nx.reshape(x, x.shape[:-1])


def intra_attend(seq, params: DenoiseParams, mask=None) -> Tensor:
    """Row j: attention of p_j over the other real entries of the same sequence.

    Returns (..., n, d). A row with no other real entry gets the zero vector.
    """
    seq = nx.as_tensor(seq)
    n, d = seq.shape[-2:]
    scores = nx.scalar_mul((seq @ params.wq) @ nx.transpose(seq @ params.wk), 1.0 / np.sqrt(d))
    keep = ~np.eye(n, dtype=bool)
    if mask is not None:
        keep = keep & np.asarray(mask, dtype=bool)[..., None, :]
    weights = nx.softmax(scores, keep)
    return (weights @ seq) @ params.wv


def inter_attend(queries, opposite, params: DenoiseParams, opp_mask=None) -> Tensor:
    """Attention of each query row over the opposite sequence.

    An opposite sequence with no real entry yields zero vectors.
    """
    queries, opposite = nx.as_tensor(queries), nx.as_tensor(opposite)
    d = queries.shape[-1]
    scores = nx.scalar_mul((queries @ params.wq) @ nx.transpose(opposite @ params.wk2), 1.0 / np.sqrt(d))
    if opp_mask is not None:
        opp_mask = np.asarray(opp_mask, dtype=bool)[..., None, :]
    return nx.softmax(scores, opp_mask) @ (opposite @ params.wv2)


def denoise_scores(seq, p_hat, n_hat, params: DenoiseParams) -> tuple[Tensor, Tensor]:
    """Intra and inter agreement scores, each of shape (..., n)."""
    sp = nx.tanh(nx.concat_cols([seq, p_hat]) @ params.wu1 + params.bu1) @ params.wu2 + params.bu2
    sn = nx.tanh(nx.concat_cols([seq, n_hat]) @ params.wu3 + params.bu3) @ params.wu4 + params.bu4
    return _squeeze_last(sp), _squeeze_last(sn)


def denoise_weights(seq, p_hat, n_hat, params: DenoiseParams, mask=None) -> Tensor:
    """alpha = softmax over real entries of s^p - ReLU(gamma) * s^n."""
    sp, sn = denoise_scores(seq, p_hat, n_hat, params)
    return nx.softmax(sp - nx.relu(params.gamma) * sn, mask)


def denoise_aggregate(seq, weights) -> Tensor:
    seq, weights = nx.as_tensor(seq), nx.as_tensor(weights)
    out = nx.reshape(weights, (*weights.shape[:-1], 1, weights.shape[-1])) @ seq
    return nx.reshape(out, (*out.shape[:-2], out.shape[-1]))


def denoise(seq, mask, opposite, opp_mask, params: DenoiseParams) -> tuple[Tensor, Tensor]:
    """Refine ``seq`` against ``opposite``; returns (denoised vector, alpha)."""
    p_hat = intra_attend(seq, params, mask)
    n_hat = inter_attend(seq, opposite, params, opp_mask)
    alpha = denoise_weights(seq, p_hat, n_hat, params, mask)
    return denoise_aggregate(seq, alpha), alpha


# ---------------------------------------------------------------- content-based aggregator


@dataclass
class ContentAggParams:
    agg: GatedAggParams
    mh: MultiHeadParams | None = None
    ln_gain: Tensor | None = None
    ln_bias: Tensor | None = None

    @staticmethod
    def specs(prefix: str, d: int, d_att: int, with_mh: bool) -> list[ParamSpec]:
        out = GatedAggParams.specs(f"{prefix}.agg", d, d_att)
        if with_mh:
            out = (MultiHeadParams.specs(f"{prefix}.mh", d)
                   + [ParamSpec(f"{prefix}.ln.gain", (d,), "gain"), ParamSpec(f"{prefix}.ln.bias", (d,), "bias")]
                   + out)
        return out

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, heads: int | None) -> "ContentAggParams":
        agg = GatedAggParams.from_store(store, f"{prefix}.agg")
        if heads is None:
            return cls(agg)
        return cls(agg, MultiHeadParams.from_store(store, f"{prefix}.mh", heads),
                   store[f"{prefix}.ln.gain"], store[f"{prefix}.ln.bias"])


def content_aggregate(seq, mask, params: ContentAggParams, return_weights: bool = False):
    """Self-attention + residual LN (when configured), then gated pooling.

    Empty sequences are pooled from their PAD slot.
    """
    seq = nx.as_tensor(seq)
    mask = with_placeholder(mask)
    if params.mh is not None:
        seq = residual_ln(seq, multi_head(seq, seq, seq, params.mh, mask), params.ln_gain, params.ln_bias)
    return gated_aggregate(seq, params.agg, mask, return_weights)


# ---------------------------------------------------------------- encoders


@dataclass
class InterestBundle:
    p_s: Tensor | None
    n_s: Tensor | None
    p_h: Tensor | None
    n_h: Tensor | None
    alpha_pos: Tensor | None = None
    alpha_neg: Tensor | None = None

    def vectors(self) -> list[Tensor | None]:
        return [self.p_s, self.n_s, self.p_h, self.n_h]


@dataclass
class InterestEncoderParams:
    ca_pos: ContentAggParams
    ca_neg: ContentAggParams
    da_pos: DenoiseParams
    da_neg: DenoiseParams

    @staticmethod
    def specs(prefix: str, d: int, d_att: int, with_mh: bool) -> list[ParamSpec]:
        return (ContentAggParams.specs(f"{prefix}.ca_pos", d, d_att, with_mh)
                + ContentAggParams.specs(f"{prefix}.ca_neg", d, d_att, with_mh)
                + DenoiseParams.specs(f"{prefix}.da_pos", d)
                + DenoiseParams.specs(f"{prefix}.da_neg", d))

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, heads: int | None) -> "InterestEncoderParams":
        return cls(ContentAggParams.from_store(store, f"{prefix}.ca_pos", heads),
                   ContentAggParams.from_store(store, f"{prefix}.ca_neg", heads),
                   DenoiseParams.from_store(store, f"{prefix}.da_pos"),
                   DenoiseParams.from_store(store, f"{prefix}.da_neg"))


def encode_interests(pos, neg, pos_mask, neg_mask, params: InterestEncoderParams, *,
                     use_pos: bool = True, use_neg: bool = True, use_denoise: bool = True) -> InterestBundle:
    """Content-based and denoised representations of both feedback sequences.

    A disabled sequence contributes no vectors and is treated as empty by
    the other sequence's denoiser.
    """
    pos_mask = np.asarray(pos_mask, dtype=bool)
    neg_mask = np.asarray(neg_mask, dtype=bool)
    if not use_neg:
        neg_mask = np.zeros_like(neg_mask)
    if not use_pos:
        pos_mask = np.zeros_like(pos_mask)
    b = InterestBundle(None, None, None, None)
    if use_pos:
        b.p_s = content_aggregate(pos, pos_mask, params.ca_pos)
        if use_denoise:
            b.p_h, b.alpha_pos = denoise(pos, with_placeholder(pos_mask), neg, neg_mask, params.da_pos)
    if use_neg:
        b.n_s = content_aggregate(neg, neg_mask, params.ca_neg)
        if use_denoise:
            b.n_h, b.alpha_neg = denoise(neg, with_placeholder(neg_mask), pos, pos_mask, params.da_neg)
    return b


def encode_semantic_interests(pos_titles, neg_titles, pos_mask, neg_mask, params: InterestEncoderParams,
                              **flags) -> InterestBundle:
    """Semantic view: inputs are title vectors, aggregators use self-attention."""
    if params.ca_pos.mh is None:
        raise ValueError("semantic interest encoder needs self-attention parameters")
    return encode_interests(pos_titles, neg_titles, pos_mask, neg_mask, params, **flags)
