"""Metric correctness against independent recount/formula oracles and
hand-computed toy values."""
import math
from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from topicloop.corpus import EmbeddingTable
from topicloop.errors import LengthMismatch
from topicloop.evaluation import (ClusterAssignment, build_cooccurrence,
                                  cv_coherence, metrics_report, nmi, npmi, pn,
                                  purity, topic_diversity, topic_quality,
                                  w2v_quality)


class TestBuildCooccurrence:
    def test_short_doc_single_window(self):
        stats = build_cooccurrence([["aa", "bb"]], window=2)
        assert stats.window_count == 1
        assert stats.doc_freq == {"aa": 1, "bb": 1}
        assert stats.p_joint("aa", "bb") == 1.0

    def test_sliding_enumeration(self):
        stats = build_cooccurrence([["aa", "bb", "cc"]], window=2)
        assert stats.window_count == 2  # {aa,bb}, {bb,cc}
        assert stats.p_joint("aa", "cc") == 0.0
        assert stats.p_joint("aa", "bb") == 0.5
        assert stats.doc_freq["bb"] == 2

    def test_joint_symmetric(self):
        stats = build_cooccurrence([["aa", "bb", "cc"], ["bb", "aa"]], window=3)
        assert stats.p_joint("aa", "bb") == stats.p_joint("bb", "aa")

    def test_doc_shorter_than_window(self):
        stats = build_cooccurrence([["aa"]], window=110)
        assert stats.window_count == 1


class TestNpmi:
    def test_perfect_association(self):
        # the pair always co-occurs but is absent from half the windows
        docs = [["aa", "bb"], ["cc", "dd"]]
        stats = build_cooccurrence(docs, window=2)
        assert npmi(("aa", "bb"), stats, eps=1e-12) > 0.99

    def test_exact_independence(self):
        # p(a)=p(b)=1/2, p(a,b)=1/4 over four windows
        docs = [["aa", "bb"], ["aa"], ["bb"], ["cc"]]
        stats = build_cooccurrence(docs, window=2)
        assert abs(npmi(("aa", "bb"), stats)) < 1e-9

    def test_negative_for_frequent_non_cooccurring(self):
        docs = [["aa"] for _ in range(5)] + [["bb"] for _ in range(5)]
        stats = build_cooccurrence(docs, window=2)
        assert npmi(("aa", "bb"), stats) < 0.0

    def test_range(self):
        docs = [["aa", "bb"], ["aa", "cc"], ["bb"], ["cc", "aa"]]
        stats = build_cooccurrence(docs, window=2)
        for pair in combinations(["aa", "bb", "cc"], 2):
            v = npmi(pair, stats)
            assert -1.0 - 1e-9 <= v <= 1.0 + 1e-9


def cv_oracle(words, stats, eps=1e-12):
    """Independent arithmetic: NPMI context vectors, cosine to their sum."""
    def pair_npmi(w1, w2):
        pj = stats.p_word(w1) if w1 == w2 else stats.p_joint(w1, w2)
        p1, p2 = stats.p_word(w1), stats.p_word(w2)
        if p1 == 0 or p2 == 0:
            return math.log(eps / max(p1 * p2, eps)) / -math.log(eps)
        return math.log((pj + eps) / (p1 * p2)) / -math.log(pj + eps)

    vecs = [[pair_npmi(wi, wj) for wj in words] for wi in words]
    agg = [sum(col) for col in zip(*vecs)]

    def cos(u, v):
        nu = math.sqrt(sum(x * x for x in u))
        nv = math.sqrt(sum(x * x for x in v))
        if nu == 0 or nv == 0:
            return 0.0
        return sum(x * y for x, y in zip(u, v)) / (nu * nv)

    return sum(cos(v, agg) for v in vecs) / len(words)


class TestCvCoherence:
    def test_always_cooccurring_words(self):
        words = [f"w{i}" for i in range(10)]
        docs = [words, ["zz", "yy"]] * 3
        stats = build_cooccurrence(docs, window=20)
        assert cv_coherence(words, stats) == pytest.approx(1.0, abs=1e-6)

    def test_three_word_toy_matches_hand_computation(self):
        docs = [["aa", "bb"], ["aa", "cc"], ["bb", "cc"], ["aa", "bb"]]
        stats = build_cooccurrence(docs, window=2)
        words = ["aa", "bb", "cc"]
        assert cv_coherence(words, stats) == pytest.approx(
            cv_oracle(words, stats), abs=1e-12)

    def test_order_invariance(self):
        docs = [["aa", "bb", "cc", "dd"], ["bb", "cc"], ["dd", "aa", "cc"]]
        stats = build_cooccurrence(docs, window=3)
        a = cv_coherence(["aa", "bb", "cc"], stats)
        b = cv_coherence(["cc", "aa", "bb"], stats)
        assert a == pytest.approx(b, abs=1e-12)

    def test_unseen_words_score_zero(self, caplog):
        stats = build_cooccurrence([["aa", "bb"]], window=2)
        with caplog.at_level("INFO"):
            score = cv_coherence(["xx", "yy"], stats)
        assert score == 0.0


def purity_oracle(assignments, labels):
    clusters = {}
    for a, l in zip(assignments, labels):
        clusters.setdefault(a, []).append(l)
    return sum(Counter(ls).most_common(1)[0][1]
               for ls in clusters.values()) / len(labels)


def nmi_oracle(assignments, labels):
    n = len(labels)
    def h(xs):
        return -sum((c / n) * math.log(c / n) for c in Counter(xs).values()
                    if c > 0)
    ha, hl = h(assignments), h(labels)
    if ha == 0 or hl == 0:
        return 0.0
    mi = 0.0
    ac, lc = Counter(assignments), Counter(labels)
    for (a, l), c in Counter(zip(assignments, labels)).items():
        mi += (c / n) * math.log((c / n) / ((ac[a] / n) * (lc[l] / n)))
    return mi / math.sqrt(ha * hl)


class TestPurity:
    def test_perfect(self):
        ca = ClusterAssignment([0, 0, 1, 1], ["A", "A", "B", "B"])
        assert purity(ca) == 1.0

    def test_single_cluster_majority(self):
        ca = ClusterAssignment([0, 0, 0, 0], ["A", "A", "B", "B"])
        assert purity(ca) == 0.5

    def test_random_instances_match_recount(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assignments = rng.integers(0, 4, 30).tolist()
            labels = [f"L{i}" for i in rng.integers(0, 3, 30)]
            ca = ClusterAssignment(assignments, labels)
            assert purity(ca) == pytest.approx(
                purity_oracle(assignments, labels), abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        assignments = rng.integers(0, 3, 20).tolist()
        labels = [f"L{i}" for i in rng.integers(0, 3, 20)]
        remap = {0: 7, 1: 5, 2: 9}
        ca1 = ClusterAssignment(assignments, labels)
        ca2 = ClusterAssignment([remap[a] for a in assignments], labels)
        assert purity(ca1) == purity(ca2)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ClusterAssignment([0, 1], ["A"])


class TestNmi:
    def test_perfect_bijection(self):
        ca = ClusterAssignment([0, 0, 1, 1, 2, 2],
                               ["A", "A", "B", "B", "C", "C"])
        assert nmi(ca) == pytest.approx(1.0, abs=1e-12)

    def test_single_cluster_zero(self):
        ca = ClusterAssignment([0, 0, 0, 0], ["A", "A", "B", "B"])
        assert nmi(ca) == 0.0

    def test_random_instances_match_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            assignments = rng.integers(0, 4, 30).tolist()
            labels = [f"L{i}" for i in rng.integers(0, 3, 30)]
            ca = ClusterAssignment(assignments, labels)
            assert nmi(ca) == pytest.approx(
                nmi_oracle(assignments, labels), abs=1e-12)

    def test_symmetric_in_partitions(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 3, 25).tolist()
        b = [f"L{i}" for i in rng.integers(0, 4, 25)]
        forward = nmi(ClusterAssignment(a, b))
        backward = nmi(ClusterAssignment([int(x[1:]) for x in b],
                                         [f"L{v}" for v in a]))
        assert forward == pytest.approx(backward, abs=1e-12)

    def test_label_rename_invariance(self):
        rng = np.random.default_rng(4)
        assignments = rng.integers(0, 3, 20).tolist()
        labels = [f"L{i}" for i in rng.integers(0, 3, 20)]
        renamed = [{"L0": "X", "L1": "Y", "L2": "Z"}[l] for l in labels]
        assert nmi(ClusterAssignment(assignments, labels)) \
            == pytest.approx(nmi(ClusterAssignment(assignments, renamed)),
                             abs=1e-12)


class TestPn:
    def test_values(self):
        assert pn(1.0, 1.0) == 1.0
        assert pn(0.5, 0.0) == 0.25
        assert pn(0.6, 0.4) == pytest.approx(0.5)


class TestTopicDiversity:
    def top25(self, prefix):
        return [f"{prefix}{i}" for i in range(25)]

    def test_disjoint(self):
        assert topic_diversity([self.top25("a"), self.top25("b")]) == 1.0

    def test_identical_pair(self):
        t = self.top25("a")
        assert topic_diversity([t, t]) == 0.5

    def test_k_identical(self):
        t = self.top25("a")
        for k in (2, 4, 5):
            assert topic_diversity([t] * k) == pytest.approx(1.0 / k)

    def test_duplicate_never_increases(self):
        rng = np.random.default_rng(5)
        pool = [f"w{i}" for i in range(60)]
        topics = [list(rng.choice(pool, 25, replace=False)) for _ in range(3)]
        base = topic_diversity(topics)
        assert topic_diversity(topics + [topics[0]]) <= base


class TestTopicQuality:
    def test_product(self):
        assert topic_quality(0.5, 0.8) == pytest.approx(0.4)
        assert topic_quality(0.7, 1.0) == pytest.approx(0.7)
        assert topic_quality(0.491, 0.786) == pytest.approx(0.491 * 0.786)


class TestW2vQuality:
    def test_identical_embeddings_zero(self):
        emb = EmbeddingTable(dim=3, vectors={
            "aa": np.array([1.0, 2.0, 3.0]),
            "bb": np.array([1.0, 2.0, 3.0]),
        })
        for metric in ("cosine", "l1", "l2"):
            assert w2v_quality([["aa", "bb"]], emb, metric) == 0.0

    def test_orthogonal_cosine(self):
        emb = EmbeddingTable(dim=2, vectors={
            "aa": np.array([1.0, 0.0]),
            "bb": np.array([0.0, 1.0]),
        })
        assert w2v_quality([["aa", "bb"]], emb, "cosine") == pytest.approx(1.0)

    def test_random_topic_matches_double_loop(self):
        rng = np.random.default_rng(6)
        words = [f"w{i}" for i in range(4)]
        emb = EmbeddingTable(dim=5, vectors={w: rng.standard_normal(5)
                                             for w in words})
        for metric in ("cosine", "l1", "l2"):
            got = w2v_quality([words], emb, metric)
            dists = []
            for i in range(4):
                for j in range(i + 1, 4):
                    u, v = emb[words[i]], emb[words[j]]
                    if metric == "cosine":
                        d = 1 - float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
                    elif metric == "l1":
                        d = float(np.abs(u - v).sum())
                    else:
                        d = float(np.linalg.norm(u - v))
                    dists.append(d)
            assert got == pytest.approx(sum(dists) / len(dists), abs=1e-12)

    def test_rejects_unknown_metric(self):
        emb = EmbeddingTable(dim=2, vectors={"aa": np.array([1.0, 0.0])})
        with pytest.raises(ValueError):
            w2v_quality([["aa"]], emb, "chebyshev")


class TestMetricsReport:
    def setting(self):
        rng = np.random.default_rng(7)
        words = [f"w{i}" for i in range(30)]
        emb = EmbeddingTable(dim=4, vectors={w: rng.standard_normal(4)
                                             for w in words})
        docs = [list(rng.choice(words, 12, replace=False)) for _ in range(20)]
        stats = build_cooccurrence(docs, window=10)
        top10 = [words[:10], words[10:20]]
        top25 = [words[:25], words[5:30]]
        return top10, top25, stats, emb

    def test_all_keys_with_labels(self):
        top10, top25, stats, emb = self.setting()
        ca = ClusterAssignment([0, 1, 0, 1], ["A", "B", "A", "B"])
        report = metrics_report(top10, top25, stats, emb, ca)
        for key in ("cv", "npmi_mean", "purity", "nmi", "pn", "td", "tq",
                    "w2v_cosine", "w2v_l1", "w2v_l2", "per_topic"):
            assert key in report
        assert len(report["per_topic"]) == 2
        assert report["tq"] == pytest.approx(report["cv"] * report["td"])
        assert report["pn"] == pytest.approx(
            0.5 * (report["purity"] + report["nmi"]))

    def test_omits_clustering_without_labels(self, caplog):
        top10, top25, stats, emb = self.setting()
        with caplog.at_level("WARNING"):
            report = metrics_report(top10, top25, stats, emb, None)
        for key in ("purity", "nmi", "pn"):
            assert key not in report
        assert "cv" in report
