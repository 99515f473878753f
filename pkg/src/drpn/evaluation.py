"""Impression-level ranking metrics, evaluation, ablation tables and attention export.

Conventions: AUC counts a tied positive/negative pair as 0.5; rank-based
metrics order by descending score and break ties by input order; a metric
is averaged over impressions, skipping impressions without both a clicked
and a skipped item.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import ImpressionLog, NewsCatalog, UserProfile, empty_profile


class DegenerateImpression(ValueError):
    """Impression lacks a positive or a negative label."""


def _arrays(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be 1-d and equally long")
    return y, s


def auc(labels, scores) -> float:
    """Mann-Whitney statistic from mid-ranks."""
    y, s = _arrays(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateImpression("auc needs a positive and a negative")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ranking(scores) -> np.ndarray:
    """1-based rank of each item under descending score, ties by input order."""
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="stable")
    ranks = np.empty(s.size, dtype=np.int64)
    ranks[order] = np.arange(1, s.size + 1)
    return ranks


def mrr(labels, scores) -> float:
    """Mean reciprocal rank over the positives."""
    y, s = _arrays(labels, scores)
    if not y.any():
        raise DegenerateImpression("mrr needs a positive")
    r = ranking(s)[y == 1]
    return math.fsum(1.0 / r) / r.size


def ndcg_at_k(labels, scores, k: int) -> float:
    y, s = _arrays(labels, scores)
    if not y.any():
        raise DegenerateImpression("ndcg needs a positive")
    r = ranking(s)
    gains = (2.0 ** y) - 1.0
    hit = r <= k
    dcg = math.fsum(gains[hit] / np.log2(r[hit] + 1.0))
    ideal = np.sort(gains)[::-1][:k]
    idcg = math.fsum(ideal / np.log2(np.arange(2, ideal.size + 2)))
    return dcg / idcg


# ---------------------------------------------------------------- reports


@dataclass
class ImpressionScores:
    impression_id: str
    items: list[tuple[str, int, float]]  # (news_id, label, score)

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y, _ in self.items], dtype=np.int64)

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, _, s in self.items], dtype=np.float64)

    def degenerate(self) -> bool:
        y = self.labels
        return not (y.any() and (y == 0).any())


METRICS = ("auc", "mrr", "ndcg5", "ndcg10")


@dataclass
class MetricReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    evaluated: int
    skipped: int

    def as_dict(self) -> dict:
        return {"auc": self.auc, "mrr": self.mrr, "ndcg5": self.ndcg5, "ndcg10": self.ndcg10,
                "evaluated": self.evaluated, "skipped": self.skipped}

    def to_tsv(self) -> str:
        d = self.as_dict()
        return "\t".join(d) + "\n" + "\t".join(repr(v) for v in d.values()) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "MetricReport":
        head, vals = text.strip().split("\n")
        d = dict(zip(head.split("\t"), vals.split("\t")))
        return cls(*(float(d[m]) for m in METRICS), int(d["evaluated"]), int(d["skipped"]))

    def table(self) -> str:
        return (f"AUC {100 * self.auc:6.2f}  MRR {100 * self.mrr:6.2f}  nDCG@5 {100 * self.ndcg5:6.2f}  "
                f"nDCG@10 {100 * self.ndcg10:6.2f}  ({self.evaluated} impressions, {self.skipped} skipped)")


def metric_report(impressions: Iterable[ImpressionScores]) -> MetricReport:
    per = {m: [] for m in METRICS}
    skipped = 0
    for imp in impressions:
        if imp.degenerate():
            skipped += 1
            continue
        y, s = imp.labels, imp.scores
        per["auc"].append(auc(y, s))
        per["mrr"].append(mrr(y, s))
        per["ndcg5"].append(ndcg_at_k(y, s, 5))
        per["ndcg10"].append(ndcg_at_k(y, s, 10))
    n = len(per["auc"])
    # fsum makes the mean independent of impression order
    means = [math.fsum(per[m]) / n if n else float("nan") for m in METRICS]
    return MetricReport(*means, evaluated=n, skipped=skipped)


# ---------------------------------------------------------------- model evaluation


def score_impressions(model, logs: Sequence[ImpressionLog], profiles: dict[str, UserProfile],
                      threads: int = 1, cache=None) -> list[ImpressionScores]:
    """Score every displayed item of every impression with a frozen model.

    Users without a profile get the all-padding profile. Each impression is
    scored independently, so the result does not depend on ``threads``.
    """
    cfg = model.config
    cache = cache if cache is not None else model.news_cache()

    def one(lg: ImpressionLog) -> ImpressionScores:
        prof = profiles.get(lg.user_id) or empty_profile(lg.user_id, cfg.l_p, cfg.l_n)
        ids = [n for n, _ in lg.displayed]
        s = model.score(prof, ids, cache)
        return ImpressionScores(lg.impression_id, [(n, y, float(v)) for (n, y), v in zip(lg.displayed, s)])

    if threads <= 1:
        return [one(lg) for lg in logs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, logs))


def evaluate(model, logs: Sequence[ImpressionLog], profiles: dict[str, UserProfile],
             threads: int = 1) -> tuple[MetricReport, list[ImpressionScores]]:
    scored = score_impressions(model, logs, profiles, threads)
    return metric_report(scored), scored


def write_scores(path, scored: Iterable[ImpressionScores]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for imp in scored:
            for nid, _, s in imp.items:
                fh.write(f"{imp.impression_id}\t{nid}\t{s!r}\n")


def read_scores(path, logs: Sequence[ImpressionLog]) -> list[ImpressionScores]:
    """Rejoin a score dump with the labels of the impressions it came from."""
    dumped: dict[str, dict[str, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            iid, nid, s = line.rstrip("\n").split("\t")
            dumped.setdefault(iid, {})[nid] = float(s)
    out = []
    for lg in logs:
        if lg.impression_id in dumped:
            sc = dumped[lg.impression_id]
            out.append(ImpressionScores(lg.impression_id, [(n, y, sc[n]) for n, y in lg.displayed]))
    return out


# ---------------------------------------------------------------- ablations


def ablation_table(rows: dict[str, MetricReport]) -> str:
    lines = ["model\tauc\tmrr\tndcg5\tndcg10"]
    for name, r in rows.items():
        lines.append(f"{name}\t{100 * r.auc:.2f}\t{100 * r.mrr:.2f}\t{100 * r.ndcg5:.2f}\t{100 * r.ndcg10:.2f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- attention inspection


@dataclass
class AttentionRow:
    sequence: str  # pos | neg
    position: int
    news_id: str
    alpha: float
    category: str = ""


def attention_weights(model, profile: UserProfile, cache=None) -> list[AttentionRow]:
    """Semantic denoiser weights for each real entry, sorted descending per sequence."""
    cand = profile.positives[:1] or [profile.positive_seq[0]]
    out = model.forward(model.make_batch([profile], [cand]), cache)
    rows = []
    for seq_name, ids, mask, alpha in (("pos", profile.positive_seq, profile.pos_mask, out.alpha_pos),
                                       ("neg", profile.negative_seq, profile.neg_mask, out.alpha_neg)):
        if alpha is None:
            continue
        entries = [AttentionRow(seq_name, i, ids[i], float(alpha[0, i]),
                                _category(model.catalog, ids[i]))
                   for i in range(len(ids)) if mask[i]]
        rows += sorted(entries, key=lambda r: (-r.alpha, r.position))
    return rows


def _category(catalog: NewsCatalog, nid: str) -> str:
    e = catalog.entries.get(nid)
    return e.category if e else ""


def write_attention_tsv(path, user_id: str, rows: list[AttentionRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user_id\tsequence\tposition\tnews_id\talpha\tcategory\n")
        for r in rows:
            fh.write(f"{user_id}\t{r.sequence}\t{r.position}\t{r.news_id}\t{r.alpha!r}\t{r.category}\n")


def attention_svg(user_id: str, rows: list[AttentionRow], cell: int = 22) -> str:
    """Two-row heatmap (positive, negative), darker = larger weight."""
    seqs = {s: [r for r in rows if r.sequence == s] for s in ("pos", "neg")}
    width = 90 + cell * max((len(v) for v in seqs.values()), default=1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{40 + 3 * cell}" '
             f'font-family="sans-serif" font-size="11">',
             f'<text x="4" y="16">attention weights for {user_id}</text>']
    for k, (name, entries) in enumerate(seqs.items()):
        y = 28 + k * (cell + 8)
        parts.append(f'<text x="4" y="{y + cell * 0.7:.0f}">{name}</text>')
        top = max((r.alpha for r in entries), default=1.0) or 1.0
        for i, r in enumerate(entries):
            shade = int(255 * (1.0 - r.alpha / top))
            parts.append(f'<rect x="{40 + i * cell}" y="{y}" width="{cell - 2}" height="{cell}" '
                         f'fill="rgb({shade},{shade},255)"><title>{r.news_id} {r.category} '
                         f'{r.alpha:.4f}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass
class NoiseSummary:
    clean_mean: float
    noisy_mean: float
    n_clean: int
    n_noisy: int
    lower_half_share: float = field(default=float("nan"))

    @property
    def ratio(self) -> float:
        return self.noisy_mean / self.clean_mean


def noise_attention_summary(model, profiles: dict[str, UserProfile], noise: dict[tuple[str, str], tuple[int, bool]],
                            users: Sequence[str] | None = None) -> NoiseSummary:
    """Mean denoiser weight on noise-flagged vs clean history entries.

    Also reports the share of noisy entries that sit in the lower half of
    their sequence's ranking.
    """
    cache = model.news_cache()
    clean, noisy, lower = [], [], []
    for u in users if users is not None else sorted(profiles):
        rows = attention_weights(model, profiles[u], cache)
        for seq in ("pos", "neg"):
            ranked = [r for r in rows if r.sequence == seq]
            for rank, r in enumerate(ranked):
                flag = noise.get((u, r.news_id))
                if flag is None:
                    continue
                if flag[1]:
                    noisy.append(r.alpha)
                    lower.append(rank >= len(ranked) / 2)
                else:
                    clean.append(r.alpha)
    return NoiseSummary(float(np.mean(clean)) if clean else float("nan"),
                        float(np.mean(noisy)) if noisy else float("nan"),
                        len(clean), len(noisy), float(np.mean(lower)) if lower else float("nan"))


def write_report(path, report: MetricReport) -> None:
    Path(path).write_text(report.to_tsv(), encoding="utf-8")
