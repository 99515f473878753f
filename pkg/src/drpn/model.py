"""Model configuration, parameter layout and the full forward pass."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numerics as nx
from .encoders import TitleEncoderParams, encode_title
from .fusion import FusionNetParams, fuse_user, fusion_weights, pair_context, predict
from .graphnet import GraphLayerParams, NeighborTable, encode_collab_interests, encode_graph_sequence
from .ingest import PAD_NEWS, UNK_NEWS, CollabGraph, NewsCatalog, UserProfile, empty_profile
from .interest import InterestEncoderParams, encode_semantic_interests
from .numerics import ParamSpec, ParamStore, Tensor

PAD_ROW, UNK_ROW = 0, 1

# variant -> (use_denoise, use_graph, use_pos, use_neg)
VARIANTS = {
    "full": (True, True, True, True),
    "no-denoise": (False, True, True, True),
    "no-graph": (True, False, True, True),
    "no-denoise-no-graph": (False, False, True, True),
    "positive-only": (True, True, True, False),
    "negative-only": (True, True, False, True),
}
VARIANT_LABELS = {
    "full": "DRPN", "no-denoise": "DRPN-D", "no-graph": "DRPN-G",
    "no-denoise-no-graph": "DRPN-DG", "positive-only": "DRPN-N", "negative-only": "DRPN-P",
}


@dataclass
class ModelConfig:
    """Hyperparameters; defaults are the published full-scale settings."""
    d: int = 300
    d_att: int = 200
    heads: int = 6
    graph_heads: int = 2
    l_p: int = 30
    l_n: int = 60
    title_len: int = 15
    l_k: int = 4
    k_nbr: int = 5
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 32
    patience: int = 2
    seed: int = 0
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.d % self.graph_heads:
            raise ValueError(f"d={self.d} not divisible by graph_heads={self.graph_heads}")

    @property
    def flags(self) -> dict[str, bool]:
        den, graph, pos, neg = VARIANTS[self.variant]
        return {"use_denoise": den, "use_graph": graph, "use_pos": pos, "use_neg": neg}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_specs(cfg: ModelConfig, n_words: int, n_rows: int) -> list[ParamSpec]:
    d, da = cfg.d, cfg.d_att
    return (TitleEncoderParams.specs("title", n_words, d, da)
            + [ParamSpec("news_emb", (n_rows, d))]
            + InterestEncoderParams.specs("sem", d, da, with_mh=True)
            + GraphLayerParams.specs("graph", d)
            + InterestEncoderParams.specs("col", d, da, with_mh=False)
            + FusionNetParams.specs("fus_t", d, da)
            + FusionNetParams.specs("fus_o", d, da))


def excluded_prefixes(variant: str) -> list[str]:
    """Parameter-name prefixes a variant must never touch."""
    den, graph, pos, neg = VARIANTS[variant]
    out = []
    if not graph:
        out += ["news_emb", "graph.", "col.", "fus_o."]
    if not den:
        out += ["sem.da_", "col.da_", "fus_t.ph.", "fus_t.nh.", "fus_o.ph.", "fus_o.nh."]
    for side, other, used in (("pos", "neg", pos), ("neg", "pos", neg)):
        if not used:
            p = side[0]
            for view in ("sem", "col"):
                out += [f"{view}.ca_{side}.", f"{view}.da_{side}.", f"{view}.da_{other}.wk2", f"{view}.da_{other}.wv2"]
            for fus in ("fus_t", "fus_o"):
                out += [f"{fus}.{p}s.", f"{fus}.{p}h."]
    return out


@dataclass
class Batch:
    pos: np.ndarray  # (B, l_p) news rows
    pos_mask: np.ndarray
    neg: np.ndarray  # (B, l_n)
    neg_mask: np.ndarray
    cand: np.ndarray  # (B, C)


@dataclass
class ForwardOutput:
    scores: Tensor  # (B, C)
    alpha_pos: np.ndarray | None = None  # semantic denoiser weights, (B, l_p)
    alpha_neg: np.ndarray | None = None
    col_alpha_pos: np.ndarray | None = None
    col_alpha_neg: np.ndarray | None = None


@dataclass
class NewsCache:
    """Precomputed title and graph-node vectors for every news row (inference only)."""
    titles: Tensor
    nodes: Tensor | None


class DRPN:
    """Parameters plus the frozen news-side inputs (titles, neighbor table)."""

    def __init__(self, config: ModelConfig, catalog: NewsCatalog, graph: CollabGraph | None = None,
                 known_news=None, store: ParamStore | None = None):
        self.config = config
        self.catalog = catalog
        self.news_ids = [PAD_NEWS, UNK_NEWS] + catalog.news_ids
        self.rows = {nid: i for i, nid in enumerate(self.news_ids)}
        n_rows = len(self.news_ids)
        L = config.title_len
        self.title_tokens = np.zeros((n_rows, L), dtype=np.int64)
        self.title_mask = np.zeros((n_rows, L), dtype=bool)
        for nid, e in catalog.entries.items():
            toks = [t + 1 for t in e.title_tokens[:L]]
            r = self.rows[nid]
            self.title_tokens[r, :len(toks)] = toks
            self.title_mask[r, :len(toks)] = True
        # ID view: news never seen during profile/training share the UNK embedding
        self.id_row = np.arange(n_rows)
        if known_news is not None:
            known = {self.rows[n] for n in known_news if n in self.rows}
            unknown = np.array([r not in known for r in range(n_rows)])
            unknown[PAD_ROW] = False
            self.id_row[unknown] = UNK_ROW
        self.graph = graph or CollabGraph()
        self.neighbors = NeighborTable.from_graph(self.graph, self.rows, n_rows, config.k_nbr)
        specs = param_specs(config, len(catalog.vocab), n_rows)
        if store is None:
            store = nx.init_params(specs, config.seed)
        else:
            check_store(store, specs)
        self.store = store
        self.profiles: dict[str, UserProfile] = {}
        self._bind()

    def _bind(self) -> None:
        s, c = self.store, self.config
        self.title_params = TitleEncoderParams.from_store(s, "title", c.heads)
        self.sem = InterestEncoderParams.from_store(s, "sem", c.heads)
        self.col = InterestEncoderParams.from_store(s, "col", None)
        self.graph_params = GraphLayerParams.from_store(s, "graph", c.graph_heads)
        self.fus_t = FusionNetParams.from_store(s, "fus_t")
        self.fus_o = FusionNetParams.from_store(s, "fus_o")

    # ------------------------------------------------------------ inputs

    def row(self, news_id: str) -> int:
        return self.rows.get(news_id, UNK_ROW)

    def profile(self, user_id: str) -> UserProfile:
        p = self.profiles.get(user_id)
        return p if p is not None else empty_profile(user_id, self.config.l_p, self.config.l_n)

    def make_batch(self, profiles: list[UserProfile], candidates: list[list[str]]) -> Batch:
        def rows(seq):
            return [self.row(n) for n in seq]

        return Batch(
            pos=np.array([rows(p.positive_seq) for p in profiles], dtype=np.int64),
            pos_mask=np.array([p.pos_mask for p in profiles], dtype=bool),
            neg=np.array([rows(p.negative_seq) for p in profiles], dtype=np.int64),
            neg_mask=np.array([p.neg_mask for p in profiles], dtype=bool),
            cand=np.array([rows(c) for c in candidates], dtype=np.int64),
        )

    # ------------------------------------------------------------ news side

    def title_vectors(self, rows) -> Tensor:
        rows = np.asarray(rows, dtype=np.int64)
        return encode_title(self.title_tokens[rows], self.title_mask[rows], self.title_params)

    def node_vectors(self, rows) -> Tensor:
        return encode_graph_sequence(self.id_row[np.asarray(rows)], self.neighbors,
                                     self.store["news_emb"], self.graph_params)

    def news_cache(self, chunk: int = 256) -> NewsCache:
        """Encode every news row once, in fixed-size chunks, outside any tape."""
        n = len(self.news_ids)
        titles = np.concatenate([self.title_vectors(np.arange(i, min(i + chunk, n))).data
                                 for i in range(0, n, chunk)])
        nodes = None
        if self.config.flags["use_graph"]:
            nodes = np.concatenate([self.node_vectors(np.arange(i, min(i + chunk, n))).data
                                    for i in range(0, n, chunk)])
            nodes = nx.Tensor(nodes)
        return NewsCache(nx.Tensor(titles), nodes)

    # ------------------------------------------------------------ forward

    def forward(self, batch: Batch, cache: NewsCache | None = None) -> ForwardOutput:
        flags = self.config.flags
        use_pos, use_neg, use_den, use_graph = flags["use_pos"], flags["use_neg"], flags["use_denoise"], flags["use_graph"]
        pm = batch.pos_mask if use_pos else np.zeros_like(batch.pos_mask)
        nm = batch.neg_mask if use_neg else np.zeros_like(batch.neg_mask)

        hist = np.concatenate([batch.pos, batch.neg], axis=1)
        if cache is None:
            uniq, inv = np.unique(np.concatenate([hist.ravel(), batch.cand.ravel()]), return_inverse=True)
            table = self.title_vectors(uniq)
            h_idx = inv[:hist.size].reshape(hist.shape)
            c_idx = inv[hist.size:].reshape(batch.cand.shape)
        else:
            table, h_idx, c_idx = cache.titles, hist, batch.cand
        lp = batch.pos.shape[1]
        pt = nx.take(table, h_idx[:, :lp])
        nt = nx.take(table, h_idx[:, lp:])
        ct = nx.take(table, c_idx)

        terms = [t for t, on in (("ps", use_pos), ("ns", use_neg), ("ph", use_pos and use_den),
                                 ("nh", use_neg and use_den)) if on]
        sem = encode_semantic_interests(pt, nt, pm, nm, self.sem, use_pos=use_pos, use_neg=use_neg,
                                        use_denoise=use_den)
        f_t = pair_context(pt, nt, pm, nm, ct, self.fus_t.agg)
        u_t = fuse_user(_pick(sem, terms), fusion_weights(f_t, self.fus_t, terms))

        u_o = co = None
        col = None
        if use_graph:
            emb = self.store["news_emb"]
            if cache is None:
                huniq, hinv = np.unique(hist, return_inverse=True)
                g = nx.take(self.node_vectors(huniq), hinv.reshape(hist.shape))
            else:
                g = nx.take(cache.nodes, hist)
            pg, ng = g[:, :lp], g[:, lp:]
            po = nx.take(emb, self.id_row[batch.pos])
            no = nx.take(emb, self.id_row[batch.neg])
            co = nx.take(emb, self.id_row[batch.cand])
            col = encode_collab_interests(pg, ng, pm, nm, self.col, use_pos=use_pos, use_neg=use_neg,
                                          use_denoise=use_den)
            f_o = pair_context(po, no, pm, nm, co, self.fus_o.agg)
            u_o = fuse_user(_pick(col, terms), fusion_weights(f_o, self.fus_o, terms))

        out = ForwardOutput(predict(u_t, ct, u_o, co))
        out.alpha_pos = _data(sem.alpha_pos)
        out.alpha_neg = _data(sem.alpha_neg)
        if col is not None:
            out.col_alpha_pos = _data(col.alpha_pos)
            out.col_alpha_neg = _data(col.alpha_neg)
        return out

    def score(self, profile: UserProfile, candidates: list[str], cache: NewsCache | None = None) -> np.ndarray:
        return self.forward(self.make_batch([profile], [candidates]), cache).scores.data[0]


def _pick(bundle, terms) -> dict[str, Tensor]:
    vecs = dict(zip(("ps", "ns", "ph", "nh"), bundle.vectors()))
    return {t: vecs[t] for t in terms}


def _data(t):
    return None if t is None else t.data


def check_store(store: ParamStore, specs: list[ParamSpec]) -> None:
    want = {s.name: tuple(s.shape) for s in specs}
    have = {n: tuple(store[n].shape) for n in store}
    problems = [f"{n}: expected {want[n]}, found {have.get(n)}" for n in want if have.get(n) != want[n]]
    problems += [f"{n}: unexpected slot" for n in have if n not in want]
    if problems:
        raise nx.CheckpointError("parameter shape mismatch: " + "; ".join(problems[:5]))
