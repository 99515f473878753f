"""Attention building blocks and the title encoder.

All functions broadcast over leading batch axes: a "sequence" is any array
of shape (..., n, d) with a boolean mask of shape (..., n). No positional
encoding is used anywhere, so self-attention is permutation equivariant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ParamSpec, ParamStore, Tensor


def with_placeholder(mask: np.ndarray) -> np.ndarray:
    """Mark slot 0 as real in rows with no real entry.

    Slot 0 of an empty row always holds a PAD item, so empty titles and
    empty feedback sequences become a learned "nothing here" input instead
    of an undefined softmax.
    """
    mask = np.array(mask, dtype=bool, copy=True)
    empty = ~mask.any(axis=-1)
    mask[..., 0] |= empty
    return mask


# ---------------------------------------------------------------- attention


def attn(q, k, v, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(width)) v, with masked keys excluded."""
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise nx.ShapeError(f"attn: incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    scores = nx.scalar_mul(q @ nx.transpose(k), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[..., None, :]
    return nx.softmax(scores, mask) @ v


@dataclass
class MultiHeadParams:
    wq: Tensor  # (d, d): column block i is the head-i query projection
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    @staticmethod
    def specs(prefix: str, d: int) -> list[ParamSpec]:
        return [ParamSpec(f"{prefix}.{n}", (d, d)) for n in ("wq", "wk", "wv", "wo")]

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, heads: int) -> "MultiHeadParams":
        return cls(*(store[f"{prefix}.{n}"] for n in ("wq", "wk", "wv", "wo")), heads=heads)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = nx.reshape(x, (*lead, n, heads, d // heads))
    nd = x.ndim
    return nx.transpose(x, (*range(nd - 3), nd - 2, nd - 3, nd - 1))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nd = x.ndim
    x = nx.transpose(x, (*range(nd - 3), nd - 2, nd - 3, nd - 1))
    return nx.reshape(x, (*lead, n, h * dh))


def multi_head(q, k, v, params: MultiHeadParams, mask=None) -> Tensor:
    """Concatenate per-head attention outputs along columns, then project."""
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    d = params.wq.shape[0]
    if d % params.heads:
        raise ValueError(f"multi_head: width {d} not divisible by {params.heads} heads")
    qh = _split_heads(q @ params.wq, params.heads)
    kh = _split_heads(k @ params.wk, params.heads)
    vh = _split_heads(v @ params.wv, params.heads)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[..., None, :]
    return _merge_heads(attn(qh, kh, vh, mask)) @ params.wo


def residual_ln(x, sub_out, gain=None, bias=None) -> Tensor:
    x, sub_out = nx.as_tensor(x), nx.as_tensor(sub_out)
    if x.shape != sub_out.shape:
        raise nx.ShapeError(f"residual_ln: shapes {x.shape} and {sub_out.shape} differ")
    return nx.layer_norm(x + sub_out, gain, bias)


# ---------------------------------------------------------------- gated aggregation


@dataclass
class GatedAggParams:
    wa: Tensor  # (d, d')
    ba: Tensor  # (d',)
    wg: Tensor  # (d', 1)

    @staticmethod
    def specs(prefix: str, d: int, d_att: int) -> list[ParamSpec]:
        return [ParamSpec(f"{prefix}.wa", (d, d_att)), ParamSpec(f"{prefix}.ba", (d_att,), "bias"),
                ParamSpec(f"{prefix}.wg", (d_att, 1))]

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> "GatedAggParams":
        return cls(store[f"{prefix}.wa"], store[f"{prefix}.ba"], store[f"{prefix}.wg"])


def gated_aggregate(x, params: GatedAggParams, mask=None, return_weights: bool = False):
    """Pool rows of ``x`` with weights softmax(tanh(x W_a + b_a) W_g).

    Raises if any sequence has every row masked; callers route empty
    sequences through :func:`with_placeholder` first.
    """
    x = nx.as_tensor(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ValueError("gated_aggregate: a sequence has every row masked")
    scores = nx.tanh(x @ params.wa + params.ba) @ params.wg
    scores = nx.reshape(scores, scores.shape[:-1])
    w = nx.softmax(scores, mask)
    out = nx.reshape(w, (*w.shape[:-1], 1, w.shape[-1])) @ x
    out = nx.reshape(out, (*out.shape[:-2], out.shape[-1]))
    return (out, w) if return_weights else out


# ---------------------------------------------------------------- title encoder


@dataclass
class TitleEncoderParams:
    embed: Tensor  # (vocab + 1, d); row 0 is PAD
    mh: MultiHeadParams
    ln_gain: Tensor
    ln_bias: Tensor
    agg: GatedAggParams

    @staticmethod
    def specs(prefix: str, n_words: int, d: int, d_att: int) -> list[ParamSpec]:
        return ([ParamSpec("word_emb", (n_words + 1, d))]
                + MultiHeadParams.specs(f"{prefix}.mh", d)
                + [ParamSpec(f"{prefix}.ln.gain", (d,), "gain"), ParamSpec(f"{prefix}.ln.bias", (d,), "bias")]
                + GatedAggParams.specs(f"{prefix}.agg", d, d_att))

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, heads: int) -> "TitleEncoderParams":
        return cls(store["word_emb"], MultiHeadParams.from_store(store, f"{prefix}.mh", heads),
                   store[f"{prefix}.ln.gain"], store[f"{prefix}.ln.bias"],
                   GatedAggParams.from_store(store, f"{prefix}.agg"))


def encode_title(tokens, mask, params: TitleEncoderParams, return_weights: bool = False):
    """Title vectors for token rows of shape (..., L).

    ``tokens`` index rows of the word embedding (0 = PAD). Rows with no real
    word are encoded from their PAD slot.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    mask = with_placeholder(mask)
    t = nx.take(params.embed, tokens)
    ctx = residual_ln(t, multi_head(t, t, t, params.mh, mask), params.ln_gain, params.ln_bias)
    return gated_aggregate(ctx, params.agg, mask, return_weights)


def load_pretrained_embeddings(path, vocab: dict[str, int], d: int,
                               base: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Fill word-embedding rows from a ``word v1 ... vd`` text file.

    Row ``word_id + 1`` receives the vector (row 0 is PAD). Words missing
    from ``vocab`` are skipped. Returns the matrix and the fraction of the
    vocabulary covered.
    """
    emb = np.array(base, dtype=np.float64, copy=True) if base is not None else np.zeros((len(vocab) + 1, d))
    if emb.shape != (len(vocab) + 1, d):
        raise ValueError(f"base embedding shape {emb.shape} != {(len(vocab) + 1, d)}")
    hit = set()
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if len(parts) < 2:
                continue
            # some vocabularies contain tokens with spaces; the vector is always the tail
            word = " ".join(parts[:-d])
            wid = vocab.get(word)
            if wid is None:
                continue
            if len(parts) - 1 < d:
                raise ValueError(f"{path}:{lineno}: expected {d} values")
            emb[wid + 1] = np.asarray(parts[-d:], dtype=np.float64)
            hit.add(wid)
    coverage = len(hit) / len(vocab) if vocab else 0.0
    return emb, coverage
