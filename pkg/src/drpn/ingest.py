"""Impression logs, news catalogs, the dataset rebuild, profiles and the co-click graph.

Formats are MIND-compatible:

* news TSV: ``news_id  category  subcategory  title  [extra columns ignored]``
* behaviors TSV: ``impression_id  user_id  time  history  items`` where items
  are space-separated ``<news_id>-1`` (clicked) / ``<news_id>-0`` (skipped)
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import combinations
from typing import Iterable

import numpy as np

PAD_NEWS = "<pad>"
UNK_NEWS = "<unk>"
DAY = 86400
MIND_TIME = "%m/%d/%Y %I:%M:%S %p"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


# ---------------------------------------------------------------- news catalog


@dataclass(frozen=True)
class NewsEntry:
    category: str
    subcategory: str
    title_tokens: tuple[int, ...]
    raw_title: str


@dataclass
class NewsCatalog:
    entries: dict[str, NewsEntry]
    vocab: dict[str, int]
    title_len: int = 15

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, news_id: str) -> bool:
        return news_id in self.entries

    @property
    def news_ids(self) -> list[str]:
        return list(self.entries)

    def mean_title_words(self) -> float:
        if not self.entries:
            return 0.0
        return float(np.mean([len(e.title_tokens) for e in self.entries.values()]))


def tokenize(title: str) -> list[str]:
    return title.lower().split()


def catalog_from_rows(rows: Iterable[tuple[str, str, str, str]], vocab_cap: int | None = None,
                      title_len: int = 15) -> NewsCatalog:
    """Build a catalog from (id, category, subcategory, title) rows.

    Word ids follow first-seen order. With ``vocab_cap`` only the most
    frequent words are kept (ties to the earlier word) and the rest are
    dropped from titles before truncation.
    """
    rows = list(rows)
    seen: dict[str, int] = {}
    counts: Counter = Counter()
    for nid, _, _, title in rows:
        for w in tokenize(title):
            seen.setdefault(w, len(seen))
            counts[w] += 1
    keep = list(seen)
    if vocab_cap is not None and len(keep) > vocab_cap:
        kept = set(sorted(keep, key=lambda w: (-counts[w], seen[w]))[:vocab_cap])
        keep = [w for w in keep if w in kept]
    vocab = {w: i for i, w in enumerate(keep)}
    entries: dict[str, NewsEntry] = {}
    for nid, cat, sub, title in rows:
        if nid in entries:
            raise DataError(f"duplicate news id {nid!r}")
        toks = [vocab[w] for w in tokenize(title) if w in vocab][:title_len]
        entries[nid] = NewsEntry(cat, sub, tuple(toks), title)
    return NewsCatalog(entries, vocab, title_len)


def parse_news_catalog(path, vocab_cap: int | None = None, title_len: int = 15) -> NewsCatalog:
    rows = []
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) < 4 or not cols[0]:
                raise DataError(f"{path}:{lineno}: expected at least 4 tab-separated columns")
            if cols[0] in ids:
                raise DataError(f"{path}:{lineno}: duplicate news id {cols[0]!r}")
            ids.add(cols[0])
            rows.append(tuple(cols[:4]))
    return catalog_from_rows(rows, vocab_cap, title_len)


def write_news(path, catalog: NewsCatalog) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for nid, e in catalog.entries.items():
            fh.write(f"{nid}\t{e.category}\t{e.subcategory}\t{e.raw_title}\n")


# ---------------------------------------------------------------- impressions


@dataclass(frozen=True)
class ImpressionLog:
    impression_id: str
    user_id: str
    timestamp: float
    displayed: tuple[tuple[str, int], ...]  # (news_id, 1 clicked / 0 skipped)

    @property
    def clicked(self) -> list[str]:
        return [n for n, y in self.displayed if y == 1]

    @property
    def skipped(self) -> list[str]:
        return [n for n, y in self.displayed if y == 0]


def parse_time(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.strptime(text, MIND_TIME).replace(tzinfo=timezone.utc)
    except ValueError:
        raise DataError(f"unparseable time {text!r}") from None
    return dt.timestamp()


def format_time(ts: float) -> str:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    # MIND writes hours and months without zero padding
    return f"{dt.month}/{dt.day}/{dt.year} {(dt.hour - 1) % 12 + 1}:{dt.minute:02d}:{dt.second:02d} " + (
        "AM" if dt.hour < 12 else "PM")


def parse_items(text: str, where: str = "") -> tuple[tuple[str, int], ...]:
    items = []
    for tok in text.split():
        nid, sep, lab = tok.rpartition("-")
        if not sep or not nid or lab not in ("0", "1"):
            raise DataError(f"{where}invalid impression item {tok!r} (expected <id>-0 or <id>-1)")
        items.append((nid, int(lab)))
    if not items:
        raise DataError(f"{where}empty impression list")
    return tuple(items)


def parse_impressions(path) -> list[ImpressionLog]:
    logs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            where = f"{path}:{lineno}: "
            if len(cols) != 5:
                raise DataError(f"{where}expected 5 tab-separated columns, got {len(cols)}")
            iid, uid, t, _history, items = cols
            try:
                ts = parse_time(t)
            except DataError as e:
                raise DataError(f"{where}{e}") from None
            logs.append(ImpressionLog(iid, uid, ts, parse_items(items, where)))
    return logs


def write_impressions(path, logs: Iterable[ImpressionLog]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lg in logs:
            items = " ".join(f"{n}-{y}" for n, y in lg.displayed)
            fh.write(f"{lg.impression_id}\t{lg.user_id}\t{format_time(lg.timestamp)}\t\t{items}\n")


# ---------------------------------------------------------------- rebuild


@dataclass
class DatasetSplits:
    profile_logs: list[ImpressionLog]
    train_logs: list[ImpressionLog]
    validation_logs: list[ImpressionLog]
    test_logs: list[ImpressionLog]

    def as_dict(self) -> dict[str, list[ImpressionLog]]:
        return {"profile": self.profile_logs, "train": self.train_logs,
                "valid": self.validation_logs, "test": self.test_logs}


def _chrono(logs: Iterable[ImpressionLog]) -> list[ImpressionLog]:
    return sorted(logs, key=lambda lg: lg.timestamp)  # stable: file order breaks ties


def rebuild_splits(logs: list[ImpressionLog], profile_days: int = 5, train_days: int = 1,
                   val_frac: float = 0.10) -> DatasetSplits:
    """Cut logs into profile / train / validation / test windows.

    Days count from UTC midnight of the earliest log. The first
    ``profile_days`` build the profiles, the next ``train_days`` are the
    training set, and everything later is the validation source, split
    chronologically into the first ``val_frac`` (validation) and the rest
    (test).
    """
    if not 0.0 <= val_frac <= 1.0:
        raise ValueError(f"val_frac must be in [0, 1], got {val_frac}")
    if not logs:
        raise DataError("no impression logs")
    ids = Counter(lg.impression_id for lg in logs)
    dups = [i for i, c in ids.items() if c > 1]
    if dups:
        raise DataError(f"duplicate impression ids: {sorted(dups)[:5]}")
    day0 = math.floor(min(lg.timestamp for lg in logs) / DAY) * DAY
    profile, train, rest = [], [], []
    for lg in _chrono(logs):
        day = int((lg.timestamp - day0) // DAY)
        if day < profile_days:
            profile.append(lg)
        elif day < profile_days + train_days:
            train.append(lg)
        else:
            rest.append(lg)
    for name, window in (("profile", profile), ("train", train), ("validation-source", rest)):
        if not window:
            raise DataError(f"empty {name} window")
    n_val = int(math.floor(val_frac * len(rest) + 1e-9))
    return DatasetSplits(profile, train, rest[:n_val], rest[n_val:])


# ---------------------------------------------------------------- feedback & profiles


class FeedbackMatrix:
    """Sparse user x news matrix with values +1 (clicked) / -1 (seen, not clicked)."""

    def __init__(self, values: dict[tuple[str, str], int] | None = None):
        self.values: dict[tuple[str, str], int] = dict(values or {})

    def __getitem__(self, key: tuple[str, str]) -> int:
        return self.values.get(key, 0)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeedbackMatrix) and self.values == other.values

    def users(self) -> list[str]:
        return sorted({u for u, _ in self.values})

    def positives(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = defaultdict(set)
        for (u, r), z in self.values.items():
            if z == 1:
                out[u].add(r)
        return dict(out)

    def items(self):
        return self.values.items()


@dataclass
class UserProfile:
    user_id: str
    positive_seq: list[str]
    negative_seq: list[str]
    pos_mask: list[bool]
    neg_mask: list[bool]

    @property
    def positives(self) -> list[str]:
        return [n for n, m in zip(self.positive_seq, self.pos_mask) if m]

    @property
    def negatives(self) -> list[str]:
        return [n for n, m in zip(self.negative_seq, self.neg_mask) if m]


def _pad(seq: list[str], length: int) -> tuple[list[str], list[bool]]:
    seq = seq[-length:] if length > 0 else []
    n = len(seq)
    return seq + [PAD_NEWS] * (length - n), [True] * n + [False] * (length - n)


def make_profile(user_id: str, positives: list[str], negatives: list[str], l_p: int, l_n: int) -> UserProfile:
    """Pad/truncate chronological sequences, keeping the most recent entries."""
    ps, pm = _pad(list(positives), l_p)
    ns, nm = _pad(list(negatives), l_n)
    return UserProfile(user_id, ps, ns, pm, nm)


def empty_profile(user_id: str, l_p: int = 30, l_n: int = 60) -> UserProfile:
    return make_profile(user_id, [], [], l_p, l_n)


def feedback_sequences(profile_logs: Iterable[ImpressionLog]) -> tuple[dict[str, tuple[list[str], list[str]]], FeedbackMatrix]:
    """Untruncated per-user sequences in chronological order, plus the matrix.

    A news clicked at least once is positive only. Repeated exposures keep
    the most recent position.
    """
    events: dict[str, dict[str, tuple[int, int]]] = defaultdict(dict)  # user -> news -> (order, label)
    order = 0
    for lg in _chrono(profile_logs):
        ev = events[lg.user_id]
        for nid, y in lg.displayed:
            prev = ev.get(nid)
            ev[nid] = (order, max(y, prev[1]) if prev else y)
            order += 1
    seqs = {}
    matrix = {}
    for user, ev in events.items():
        ranked = sorted(ev.items(), key=lambda kv: kv[1][0])
        pos = [n for n, (_, y) in ranked if y == 1]
        neg = [n for n, (_, y) in ranked if y == 0]
        seqs[user] = (pos, neg)
        for n in pos:
            matrix[(user, n)] = 1
        for n in neg:
            matrix[(user, n)] = -1
    return seqs, FeedbackMatrix(matrix)


def build_profiles(profile_logs: Iterable[ImpressionLog], l_p: int = 30, l_n: int = 60,
                   users: Iterable[str] = ()) -> tuple[dict[str, UserProfile], FeedbackMatrix]:
    """Profiles for every user in the profile window (and any extra ``users``)."""
    seqs, matrix = feedback_sequences(profile_logs)
    profiles = {u: make_profile(u, p, n, l_p, l_n) for u, (p, n) in seqs.items()}
    for u in users:
        if u not in profiles:
            profiles[u] = empty_profile(u, l_p, l_n)
    return profiles, matrix


def matrix_from_sequences(seqs: dict[str, tuple[list[str], list[str]]]) -> FeedbackMatrix:
    vals = {}
    for u, (pos, neg) in seqs.items():
        vals.update({(u, n): -1 for n in neg})
        vals.update({(u, n): 1 for n in pos})
    return FeedbackMatrix(vals)


def write_profiles(path, profiles: dict[str, UserProfile]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in sorted(profiles):
            p = profiles[u]
            fh.write(f"{u}\t{' '.join(p.positives)}\t{' '.join(p.negatives)}\n")


def read_profiles(path, l_p: int = 30, l_n: int = 60) -> dict[str, UserProfile]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise DataError(f"{path}: expected 3 columns")
            out[cols[0]] = make_profile(cols[0], cols[1].split(), cols[2].split(), l_p, l_n)
    return out


def write_feedback(path, matrix: FeedbackMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (u, r), z in sorted(matrix.items()):
            fh.write(f"{u}\t{r}\t{z}\n")


# ---------------------------------------------------------------- collaborative graph


@dataclass
class CollabGraph:
    neighbors: dict[str, list[tuple[str, int]]] = field(default_factory=dict)

    def __getitem__(self, news_id: str) -> list[tuple[str, int]]:
        return self.neighbors.get(news_id, [])

    def n_edges(self) -> int:
        return sum(len(v) for v in self.neighbors.values())


def co_click_counts(matrix: FeedbackMatrix) -> dict[tuple[str, str], int]:
    """Raw symmetric co-click counts over users with +1 on both news."""
    counts: Counter = Counter()
    for items in matrix.positives().values():
        for a, b in combinations(sorted(items), 2):
            counts[(a, b)] += 1
            counts[(b, a)] += 1
    return dict(counts)


def build_collab_graph(matrix: FeedbackMatrix, k_nbr: int = 5) -> CollabGraph:
    """Top-``k_nbr`` co-clicked neighbors per news; ties go to the lexicographically smaller news id."""
    adj: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for (a, b), c in co_click_counts(matrix).items():
        adj[a].append((b, c))
    graph = CollabGraph()
    for node in sorted(adj):
        ranked = sorted(adj[node], key=lambda nc: (-nc[1], nc[0]))
        graph.neighbors[node] = ranked[:k_nbr]
    return graph


def write_graph(path, graph: CollabGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src in sorted(graph.neighbors):
            for dst, c in graph.neighbors[src]:
                fh.write(f"{src}\t{dst}\t{c}\n")


def read_graph(path) -> CollabGraph:
    adj: dict[str, list[tuple[str, int]]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise DataError(f"{path}:{lineno}: expected src, dst, count")
            adj[cols[0]].append((cols[1], int(cols[2])))
    return CollabGraph({k: sorted(v, key=lambda nc: (-nc[1], nc[0])) for k, v in adj.items()})


def degree_histogram(graph: CollabGraph) -> dict[int, int]:
    return dict(sorted(Counter(len(v) for v in graph.neighbors.values()).items()))


# ---------------------------------------------------------------- statistics


def dataset_statistics(catalog: NewsCatalog, splits: DatasetSplits) -> dict[str, float]:
    """Table-1 style statistics of a rebuilt dataset."""
    seqs, _ = feedback_sequences(splits.profile_logs)
    all_logs = splits.profile_logs + splits.train_logs + splits.validation_logs + splits.test_logs
    pos = sum(len(lg.clicked) for lg in all_logs)
    neg = sum(len(lg.skipped) for lg in all_logs)
    return {
        "users": len({lg.user_id for lg in all_logs}),
        "news": len(catalog),
        "words": len(catalog.vocab),
        "avg_title_words": catalog.mean_title_words(),
        "positive_samples": pos,
        "negative_samples": neg,
        "avg_positive_seq_len": float(np.mean([len(p) for p, _ in seqs.values()])) if seqs else 0.0,
        "avg_negative_seq_len": float(np.mean([len(n) for _, n in seqs.values()])) if seqs else 0.0,
    }


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticTruth:
    liked_topics: dict[str, frozenset[int]]
    news_topic: dict[str, int]
    # (user, news) -> (feedback sign, noise flag) for every profile-window entry
    feedback: dict[tuple[str, str], tuple[int, bool]]

    def noise_fraction(self) -> float:
        if not self.feedback:
            return 0.0
        return sum(f for _, f in self.feedback.values()) / len(self.feedback)


@dataclass(frozen=True)
class SynthShape:
    """Knobs of the synthetic world beyond users/news/topics/noise."""
    liked_per_user: int = 2
    profile_impressions: int = 3
    train_impressions: int = 1
    eval_impressions: int = 1
    impression_size: int = 8
    liked_share: float = 0.5
    words_per_topic: int = 40
    common_words: int = 60
    topic_word_prob: float = 0.7
    title_words: tuple[int, int] = (6, 12)
    profile_days: int = 5
    train_days: int = 1
    start: float = 1573257600.0  # 2019-11-09 00:00 UTC


def generate_synthetic(n_users: int, n_news: int, n_topics: int, noise_rate: float, seed: int,
                       shape: SynthShape = SynthShape()):
    """Topic-structured news and impressions with planted feedback noise.

    Every displayed item's true label is "clicked" iff its topic is liked by
    the user. In the profile window each label is flipped with probability
    ``noise_rate`` and the flip is recorded in the truth; train and
    validation-source labels are left clean so held-out metrics measure
    preference recovery. No user is shown the same news twice.

    Returns ``(catalog, logs, truth)``.
    """
    if not 0.0 <= noise_rate < 1.0:
        raise ValueError(f"noise_rate must be in [0, 1), got {noise_rate}")
    if n_topics > n_news:
        raise ValueError(f"n_topics ({n_topics}) > n_news ({n_news})")
    if n_topics < 1 or n_users < 1:
        raise ValueError("need at least one topic and one user")
    rng = np.random.default_rng(seed)
    s = shape

    topic_of = np.concatenate([np.arange(n_topics), rng.integers(0, n_topics, n_news - n_topics)])
    rng.shuffle(topic_of)
    news_ids = [f"N{i + 1}" for i in range(n_news)]
    by_topic = [np.flatnonzero(topic_of == t) for t in range(n_topics)]
    rows = []
    for i, nid in enumerate(news_ids):
        t = int(topic_of[i])
        n_words = int(rng.integers(s.title_words[0], s.title_words[1] + 1))
        words = []
        for _ in range(n_words):
            if rng.random() < s.topic_word_prob:
                words.append(f"t{t}w{int(rng.integers(s.words_per_topic))}")
            else:
                words.append(f"c{int(rng.integers(s.common_words))}")
        rows.append((nid, f"topic{t}", f"topic{t}-{i % 3}", " ".join(words)))
    catalog = catalog_from_rows(rows)

    liked: dict[str, frozenset[int]] = {}
    raw_logs = []  # (timestamp, user, displayed, in_profile)
    feedback: dict[tuple[str, str], tuple[int, bool]] = {}
    n_liked = min(s.liked_per_user, n_topics)
    windows = ([(0, s.profile_days, True)] * s.profile_impressions
               + [(s.profile_days, s.train_days, False)] * s.train_impressions
               + [(s.profile_days + s.train_days, 1, False)] * s.eval_impressions)
    for u in range(n_users):
        uid = f"U{u + 1}"
        likes = frozenset(int(t) for t in rng.choice(n_topics, size=n_liked, replace=False))
        liked[uid] = likes
        liked_pool = np.concatenate([by_topic[t] for t in sorted(likes)])
        other_pool = np.concatenate([by_topic[t] for t in range(n_topics) if t not in likes] or [np.array([], int)])
        shown: set[int] = set()
        for day0, span, in_profile in windows:
            ts = s.start + day0 * DAY + float(rng.integers(0, span * DAY))
            displayed = []
            for _ in range(s.impression_size):
                pool = liked_pool if (rng.random() < s.liked_share or other_pool.size == 0) else other_pool
                item = int(pool[rng.integers(pool.size)])
                if item in shown:
                    fresh = [int(i) for i in pool if int(i) not in shown]
                    if not fresh:
                        continue
                    item = fresh[int(rng.integers(len(fresh)))]
                shown.add(item)
                label = int(topic_of[item] in likes)
                noisy = False
                if in_profile and rng.random() < noise_rate:
                    label, noisy = 1 - label, True
                displayed.append((news_ids[item], label))
                if in_profile:
                    feedback[(uid, news_ids[item])] = (1 if label else -1, noisy)
            if displayed:
                raw_logs.append((ts, uid, tuple(displayed)))
    raw_logs.sort(key=lambda r: (r[0], r[1]))
    logs = [ImpressionLog(f"I{i + 1}", uid, ts, disp) for i, (ts, uid, disp) in enumerate(raw_logs)]
    truth = SyntheticTruth(liked, {nid: int(topic_of[i]) for i, nid in enumerate(news_ids)}, feedback)
    return catalog, logs, truth


def write_truth(path, truth: SyntheticTruth) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (u, n), (sign, noisy) in sorted(truth.feedback.items()):
            fh.write(f"{u}\t{n}\t{sign}\t{int(noisy)}\n")


def read_truth(path) -> dict[tuple[str, str], tuple[int, bool]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            u, n, sign, flag = line.rstrip("\n").split("\t")
            out[(u, n)] = (int(sign), flag == "1")
    return out
