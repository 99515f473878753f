from collections import Counter
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drpn.ingest import (
    DAY,
    PAD_NEWS,
    DataError,
    FeedbackMatrix,
    ImpressionLog,
    build_collab_graph,
    build_profiles,
    catalog_from_rows,
    co_click_counts,
    feedback_sequences,
    format_time,
    generate_synthetic,
    matrix_from_sequences,
    parse_impressions,
    parse_items,
    parse_news_catalog,
    parse_time,
    read_graph,
    read_profiles,
    rebuild_splits,
    write_graph,
    write_impressions,
    write_news,
    write_profiles,
    write_truth,
)

T0 = 1573257600.0  # a UTC midnight


def log(iid, user, day, items, hour=12.0):
    return ImpressionLog(iid, user, T0 + day * DAY + hour * 3600, tuple(items))


# ---------------------------------------------------------------- catalog


class TestCatalog:
    def test_first_seen_ids(self):
        cat = catalog_from_rows([("N1", "c", "s", "a b a")])
        assert cat.vocab == {"a": 0, "b": 1}
        assert list(cat.entries["N1"].title_tokens) == [0, 1, 0]

    def test_truncation_to_fifteen(self, tmp_path):
        p = tmp_path / "news.tsv"
        p.write_text("N1\tc\ts\t" + " ".join(f"w{i}" for i in range(20)) + "\n")
        cat = parse_news_catalog(p)
        assert len(cat.entries["N1"].title_tokens) == 15

    def test_lowercased_and_word_ids_in_range(self, fixture_news):
        cat = parse_news_catalog(fixture_news)
        assert len(cat) == 8
        assert all(t < len(cat.vocab) for e in cat.entries.values() for t in e.title_tokens)
        assert "cup" in cat.vocab and "Cup" not in cat.vocab

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "news.tsv"
        p.write_text("N1\tc\ts\ta\nN2\tc\ts\tb\nN1\tc\ts\tc\n")
        with pytest.raises(DataError, match=":3"):
            parse_news_catalog(p)

    def test_malformed_line_reports_line_number(self, tmp_path):
        p = tmp_path / "news.tsv"
        p.write_text("N1\tc\ts\ta\nN2 only\n")
        with pytest.raises(DataError, match=":2"):
            parse_news_catalog(p)

    def test_vocab_cap_keeps_frequent_words(self):
        cat = catalog_from_rows([("N1", "c", "s", "x y y z z z")], vocab_cap=2)
        assert set(cat.vocab) == {"y", "z"}

    def test_write_read_round_trip(self, tmp_path, fixture_news):
        cat = parse_news_catalog(fixture_news)
        write_news(tmp_path / "n.tsv", cat)
        again = parse_news_catalog(tmp_path / "n.tsv")
        assert again.vocab == cat.vocab
        assert {k: v.title_tokens for k, v in again.entries.items()} == {
            k: v.title_tokens for k, v in cat.entries.items()}


# ---------------------------------------------------------------- impressions


class TestImpressions:
    def test_suffix_decoding(self):
        assert parse_items("N1-1 N2-0") == (("N1", 1), ("N2", 0))

    @pytest.mark.parametrize("bad", ["N1-2", "N1", "-1", "N1-x"])
    def test_bad_suffix(self, bad):
        with pytest.raises(DataError):
            parse_items(bad)

    def test_empty_list(self):
        with pytest.raises(DataError):
            parse_items("  ")

    def test_ids_with_dashes(self):
        assert parse_items("a-b-1") == (("a-b", 1),)

    def test_mind_time_is_utc(self):
        assert parse_time("11/9/2019 12:00:00 AM") == T0
        assert parse_time("11/9/2019 1:30:00 PM") == T0 + 13.5 * 3600

    @given(st.integers(0, 10**9))
    def test_time_format_round_trip(self, ts):
        assert parse_time(format_time(float(ts))) == float(ts)

    def test_parse_fixture(self, fixture_behaviors):
        logs = parse_impressions(fixture_behaviors)
        assert len(logs) == 18
        assert logs[0].displayed == (("N1", 1), ("N2", 0), ("N3", 0))
        assert [lg.impression_id for lg in logs[:3]] == ["I1", "I2", "I3"]

    def test_wrong_column_count(self, tmp_path):
        p = tmp_path / "b.tsv"
        p.write_text("I1\tU1\t0\tN1-1\n")
        with pytest.raises(DataError, match=":1"):
            parse_impressions(p)

    def test_write_read_round_trip(self, tmp_path, fixture_behaviors):
        logs = parse_impressions(fixture_behaviors)
        write_impressions(tmp_path / "b.tsv", logs)
        assert parse_impressions(tmp_path / "b.tsv") == logs


# ---------------------------------------------------------------- splits


class TestSplits:
    def test_seven_days_defaults(self):
        logs = [log(f"I{d}", "U1", d, [("N1", 1), ("N2", 0)]) for d in range(7)]
        s = rebuild_splits(logs)
        assert [lg.impression_id for lg in s.profile_logs] == ["I0", "I1", "I2", "I3", "I4"]
        assert [lg.impression_id for lg in s.train_logs] == ["I5"]
        assert [lg.impression_id for lg in s.validation_logs + s.test_logs] == ["I6"]

    def test_val_frac_zero_sends_all_to_test(self):
        logs = [log("P", "U", 0, [("N1", 1)]), log("T", "U", 5, [("N1", 1)])]
        logs += [log(f"V{i}", "U", 6, [("N1", 1)], hour=i / 10) for i in range(20)]
        s = rebuild_splits(logs, val_frac=0.0)
        assert s.validation_logs == [] and len(s.test_logs) == 20

    def test_first_ten_percent_by_time(self):
        rng = np.random.default_rng(0)
        hours = rng.permutation(100) * 0.2
        logs = [log("P", "U", 0, [("N1", 1)]), log("T", "U", 5, [("N1", 1)])]
        logs += [log(f"V{int(h * 5)}", "U", 6, [("N1", 1)], hour=h) for h in hours]
        s = rebuild_splits(logs)
        assert [lg.impression_id for lg in s.validation_logs] == [f"V{i}" for i in range(10)]
        assert len(s.test_logs) == 90

    def test_empty_window_named(self):
        logs = [log("P", "U", 0, [("N1", 1)]), log("V", "U", 8, [("N1", 1)])]
        with pytest.raises(DataError, match="train"):
            rebuild_splits(logs)

    def test_duplicate_impression_ids(self):
        logs = [log("P", "U", 0, [("N1", 1)]), log("P", "U", 5, [("N1", 1)])]
        with pytest.raises(DataError, match="duplicate"):
            rebuild_splits(logs)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 12 * DAY, allow_nan=False), min_size=1, max_size=60))
    def test_partition_properties(self, offsets):
        logs = [log("P", "U", 0, [("N1", 1)], hour=0), log("T", "U", 5, [("N1", 1)]),
                log("V", "U", 6, [("N1", 1)])]
        logs += [ImpressionLog(f"X{i}", "U", T0 + o, (("N1", 1),)) for i, o in enumerate(offsets)]
        s = rebuild_splits(logs)
        parts = [s.profile_logs, s.train_logs, s.validation_logs, s.test_logs]
        ids = [lg.impression_id for part in parts for lg in part]
        assert len(ids) == len(logs) == len(set(ids))
        assert max(lg.timestamp for lg in s.profile_logs) < min(lg.timestamp for lg in s.train_logs)
        if s.validation_logs:
            assert max(lg.timestamp for lg in s.validation_logs) <= min(lg.timestamp for lg in s.test_logs)


# ---------------------------------------------------------------- profiles


class TestProfiles:
    def test_single_click_padding(self):
        profiles, _ = build_profiles([log("I", "U", 0, [("N1", 1), ("N2", 0)])])
        p = profiles["U"]
        assert p.positive_seq == ["N1"] + [PAD_NEWS] * 29
        assert p.pos_mask == [True] + [False] * 29
        assert len(p.negative_seq) == len(p.neg_mask) == 60

    def test_click_wins_over_skip(self):
        logs = [log("A", "U", 0, [("N1", 0), ("N2", 0)]), log("B", "U", 1, [("N1", 1)]),
                log("C", "U", 2, [("N1", 0)])]
        profiles, matrix = build_profiles(logs)
        assert profiles["U"].positives == ["N1"]
        assert profiles["U"].negatives == ["N2"]
        assert matrix[("U", "N1")] == 1 and matrix[("U", "N2")] == -1

    def test_truncation_keeps_most_recent(self):
        logs = [log(f"I{i}", "U", 0, [(f"N{i}", 1)], hour=i) for i in range(6)]
        profiles, _ = build_profiles(logs, l_p=3, l_n=2)
        assert profiles["U"].positives == ["N3", "N4", "N5"]

    def test_extra_users_get_empty_profiles(self):
        profiles, _ = build_profiles([log("I", "U", 0, [("N1", 1)])], users=["COLD"])
        assert not any(profiles["COLD"].pos_mask) and not any(profiles["COLD"].neg_mask)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.sampled_from("ABC"), st.lists(
        st.tuples(st.sampled_from([f"N{i}" for i in range(8)]), st.integers(0, 1)), min_size=1, max_size=5)),
        min_size=1, max_size=12))
    def test_sequence_invariants(self, raw):
        logs = [log(f"I{i}", u, 0, items, hour=i) for i, (u, items) in enumerate(raw)]
        seqs, matrix = feedback_sequences(logs)
        profiles, _ = build_profiles(logs, l_p=4, l_n=4)
        for u, (pos, neg) in seqs.items():
            assert not set(pos) & set(neg)
            assert len(pos) == len(set(pos)) and len(neg) == len(set(neg))
            p = profiles[u]
            assert p.positives == pos[-4:] and p.negatives == neg[-4:]
            k = sum(p.pos_mask)
            assert p.pos_mask == [True] * k + [False] * (4 - k)
        assert set(matrix.items()) <= {((u, n), z) for (u, n), z in matrix.items() if z in (1, -1)}
        assert matrix_from_sequences(seqs) == matrix
        clicked = {(lg.user_id, n) for lg in logs for n in lg.clicked}
        assert {k for k, z in matrix.items() if z == 1} == clicked

    def test_profiles_file_round_trip(self, tmp_path):
        logs = [log("A", "U", 0, [("N1", 1), ("N2", 0)]), log("B", "V", 1, [("N3", 0)])]
        profiles, _ = build_profiles(logs, 3, 3)
        write_profiles(tmp_path / "p.tsv", profiles)
        assert read_profiles(tmp_path / "p.tsv", 3, 3) == profiles


# ---------------------------------------------------------------- graph


def brute_force_edges(matrix: FeedbackMatrix) -> set[tuple[str, str]]:
    users = {u for u, _ in dict(matrix.items())}
    news = {n for _, n in dict(matrix.items())}
    edges = set()
    for i in news:
        for j in news:
            if i != j and any(matrix[(u, i)] == 1 and matrix[(u, j)] == 1 for u in users):
                edges.add((i, j))
    return edges


class TestGraph:
    def test_single_clique(self):
        g = build_collab_graph(FeedbackMatrix({("U", "A"): 1, ("U", "B"): 1, ("U", "C"): 1}))
        assert g["A"] == [("B", 1), ("C", 1)]

    def test_disjoint_users(self):
        m = FeedbackMatrix({("U", "A"): 1, ("U", "B"): 1, ("V", "C"): 1, ("V", "D"): 1})
        g = build_collab_graph(m)
        assert g["A"] == [("B", 1)] and g["C"] == [("D", 1)]

    def test_top_five_with_ties(self):
        # A co-clicked with B..H at counts 3,3,2,2,2,1,1
        counts = {"H": 3, "B": 3, "G": 2, "C": 2, "E": 2, "F": 1, "D": 1}
        vals = {}
        u = 0
        for n, c in counts.items():
            for _ in range(c):
                vals[(f"U{u}", "A")] = 1
                vals[(f"U{u}", n)] = 1
                u += 1
        g = build_collab_graph(FeedbackMatrix(vals))
        assert g["A"] == [("B", 3), ("H", 3), ("C", 2), ("E", 2), ("G", 2)]

    def test_negative_feedback_makes_no_edges(self):
        g = build_collab_graph(FeedbackMatrix({("U", "A"): 1, ("U", "B"): -1}))
        assert g.n_edges() == 0

    @settings(max_examples=40, deadline=None)
    @given(st.dictionaries(st.tuples(st.sampled_from([f"U{i}" for i in range(50)]),
                                     st.sampled_from([f"N{i}" for i in range(10)])),
                           st.sampled_from([1, -1]), max_size=120))
    def test_edges_match_brute_force(self, vals):
        m = FeedbackMatrix(vals)
        counts = co_click_counts(m)
        assert all(counts[(a, b)] == counts[(b, a)] for a, b in counts)
        g = build_collab_graph(m, k_nbr=10)
        got = {(a, b) for a, nbrs in g.neighbors.items() for b, _ in nbrs}
        assert got == brute_force_edges(m)
        pruned = build_collab_graph(m, k_nbr=2)
        for a, nbrs in pruned.neighbors.items():
            assert len(nbrs) <= 2 and a not in [b for b, _ in nbrs]
            assert [c for _, c in nbrs] == sorted((c for _, c in nbrs), reverse=True)

    def test_graph_file_round_trip(self, tmp_path):
        m = FeedbackMatrix({("U", "A"): 1, ("U", "B"): 1, ("V", "A"): 1, ("V", "C"): 1})
        g = build_collab_graph(m)
        write_graph(tmp_path / "g.tsv", g)
        assert read_graph(tmp_path / "g.tsv").neighbors == g.neighbors


# ---------------------------------------------------------------- synthetic


class TestSynthetic:
    def test_no_noise_means_clicks_on_liked_topics(self):
        cat, logs, truth = generate_synthetic(100, 200, 6, 0.0, 3)
        for lg in logs:
            for n, y in lg.displayed:
                assert y == int(truth.news_topic[n] in truth.liked_topics[lg.user_id])
        assert truth.noise_fraction() == 0.0

    def test_same_seed_byte_identical(self, tmp_path):
        for run in ("a", "b"):
            cat, logs, truth = generate_synthetic(60, 80, 4, 0.2, 11)
            d = tmp_path / run
            d.mkdir()
            write_news(d / "news.tsv", cat)
            write_impressions(d / "behaviors.tsv", logs)
            write_truth(d / "truth.tsv", truth)
        for f in ("news.tsv", "behaviors.tsv", "truth.tsv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_noise_fraction_binomial(self):
        _, _, truth = generate_synthetic(500, 400, 8, 0.2, 5)
        assert len(truth.feedback) >= 10_000
        assert abs(truth.noise_fraction() - 0.2) < 0.02

    def test_noise_flags_mark_label_flips(self):
        _, logs, truth = generate_synthetic(80, 100, 5, 0.3, 2)
        for (u, n), (sign, noisy) in truth.feedback.items():
            liked = truth.news_topic[n] in truth.liked_topics[u]
            assert (sign == 1) == (liked != noisy)

    def test_every_profile_entry_has_a_flag(self):
        cat, logs, truth = generate_synthetic(80, 100, 5, 0.2, 2)
        s = rebuild_splits(logs)
        profiles, _ = build_profiles(s.profile_logs)
        for u, p in profiles.items():
            for n in p.positives + p.negatives:
                assert (u, n) in truth.feedback

    def test_topics_exceeding_news(self):
        with pytest.raises(ValueError):
            generate_synthetic(10, 3, 4, 0.1, 0)

    @pytest.mark.parametrize("rate", [-0.1, 1.0])
    def test_noise_rate_range(self, rate):
        with pytest.raises(ValueError):
            generate_synthetic(10, 30, 4, rate, 0)

    def test_titles_follow_topics(self):
        cat, _, truth = generate_synthetic(10, 200, 4, 0.0, 1)
        words = {w: i for i, w in enumerate(cat.vocab)}
        inv = {i: w for w, i in words.items()}
        hits = Counter()
        for nid, e in cat.entries.items():
            t = truth.news_topic[nid]
            hits[all(not inv[x].startswith("t") or inv[x].startswith(f"t{t}w") for x in e.title_tokens)] += 1
        assert hits[False] == 0

    def test_users_never_see_a_news_twice(self):
        _, logs, _ = generate_synthetic(50, 300, 6, 0.2, 4)
        seen = {}
        for lg in logs:
            for n, _ in lg.displayed:
                assert (lg.user_id, n) not in seen
                seen[(lg.user_id, n)] = True


def test_pairs_helper_is_consistent():
    # the brute-force oracle above agrees with itertools on a tiny clique
    m = FeedbackMatrix({("U", "A"): 1, ("U", "B"): 1, ("U", "C"): 1})
    assert brute_force_edges(m) == {p for a, b in combinations("ABC", 2) for p in ((a, b), (b, a))}
