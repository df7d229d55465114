"""Topic and document-representation quality metrics.

Coherence follows the indirect-confirmation recipe: NPMI context vectors
over boolean sliding windows, compared by cosine similarity against the
aggregate vector of the whole word set. Clustering quality compares
top-topic assignments with gold labels via Purity and NMI; their mean is
reported as a single alignment score.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 110
NPMI_EPS = 1e-12


@dataclass(frozen=True)
class CooccurrenceStats:
    """Boolean sliding-window counts over a reference corpus."""

    window_size: int
    window_count: int
    doc_freq: dict[str, int]
    joint_freq: dict[tuple[str, str], int]

    def p_word(self, w: str) -> float:
        return self.doc_freq.get(w, 0) / self.window_count

    def p_joint(self, w1: str, w2: str) -> float:
        if w1 == w2:  # a window containing w contains the pair (w, w)
            return self.p_word(w1)
        key = (w1, w2) if w1 <= w2 else (w2, w1)
        return self.joint_freq.get(key, 0) / self.window_count


@dataclass(frozen=True)
class ClusterAssignment:
    assignments: list
    labels: list

    def __post_init__(self):
        if len(self.assignments) != len(self.labels):
            raise LengthMismatch(
                f"{len(self.assignments)} assignments vs {len(self.labels)} labels")
        if not self.assignments:
            raise LengthMismatch("empty cluster assignment")


def build_cooccurrence(reference_docs, window: int = DEFAULT_WINDOW) -> CooccurrenceStats:
    """Count single and pairwise word occurrences per sliding window.

    Windows have stride 1; documents shorter than the window contribute a
    single window. Pair keys are canonically ordered.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    df: Counter = Counter()
    joint: Counter = Counter()
    n_windows = 0
    for tokens in reference_docs:
        tokens = list(tokens)
        if not tokens:
            continue
        spans = max(1, len(tokens) - window + 1)
        for start in range(spans):
            n_windows += 1
            seen = sorted(set(tokens[start:start + window]))
            df.update(seen)
            for i, w1 in enumerate(seen):
                for w2 in seen[i + 1:]:
                    joint[(w1, w2)] += 1
    return CooccurrenceStats(window_size=window, window_count=n_windows,
                             doc_freq=dict(df), joint_freq=dict(joint))


def npmi(word_pair, stats: CooccurrenceStats, eps: float = NPMI_EPS) -> float:
    """Normalized pointwise mutual information of one word pair."""
    w1, w2 = word_pair
    if stats.window_count == 0:
        return 0.0
    pj = stats.p_joint(w1, w2)
    p1 = stats.p_word(w1)
    p2 = stats.p_word(w2)
    if p1 == 0.0 or p2 == 0.0:
        return math.log(eps / max(p1 * p2, eps)) / -math.log(eps)
    return math.log((pj + eps) / (p1 * p2)) / -math.log(pj + eps)


def cv_coherence(topic_words, stats: CooccurrenceStats, eps: float = NPMI_EPS) -> float:
    """One-set-segmentation coherence of a topic's top words.

    Each word's NPMI vector against the full word set is compared to the
    sum of all vectors via cosine similarity; the score is the mean
    similarity. Degenerate all-zero vectors score 0 and are logged.
    """
    words = list(topic_words)
    n = len(words)
    vectors = np.zeros((n, n))
    for i, wi in enumerate(words):
        for j, wj in enumerate(words):
            vectors[i, j] = npmi((wi, wj), stats, eps)
    aggregate = vectors.sum(axis=0)
    agg_norm = np.linalg.norm(aggregate)
    sims = []
    for i in range(n):
        v_norm = np.linalg.norm(vectors[i])
        if v_norm == 0.0 or agg_norm == 0.0:
            logger.info("degenerate NPMI vector for %r; similarity set to 0",
                        words[i])
            sims.append(0.0)
        else:
            sims.append(float(vectors[i] @ aggregate / (v_norm * agg_norm)))
    return float(np.mean(sims))


def purity(ca: ClusterAssignment) -> float:
    """Fraction of documents matching their cluster's majority label."""
    by_cluster: dict = {}
    for a, l in zip(ca.assignments, ca.labels):
        by_cluster.setdefault(a, Counter())[l] += 1
    correct = sum(max(counts.values()) for counts in by_cluster.values())
    return correct / len(ca.assignments)


def _entropy(counts: Counter, n: int) -> float:
    h = 0.0
    for c in counts.values():
        if c > 0:
            p = c / n
            h -= p * math.log(p)
    return h


def nmi(ca: ClusterAssignment) -> float:
    """Mutual information normalized by sqrt(H(assignments) * H(labels));
    0 by convention when either partition has zero entropy."""
    n = len(ca.assignments)
    ac = Counter(ca.assignments)
    lc = Counter(ca.labels)
    joint = Counter(zip(ca.assignments, ca.labels))
    h_a = _entropy(ac, n)
    h_l = _entropy(lc, n)
    if h_a == 0.0 or h_l == 0.0:
        return 0.0
    mi = 0.0
    for (a, l), c in joint.items():
        p_al = c / n
        mi += p_al * math.log(p_al / ((ac[a] / n) * (lc[l] / n)))
    return mi / math.sqrt(h_a * h_l)


def pn(purity_value: float, nmi_value: float) -> float:
    return 0.5 * (purity_value + nmi_value)


def topic_diversity(all_topics_top25) -> float:
    """Unique-word fraction across the per-topic top-25 lists."""
    lists = [list(t) for t in all_topics_top25]
    if not lists:
        raise ValueError("no topics")
    total = sum(len(t) for t in lists)
    unique = len({w for t in lists for w in t})
    return unique / total


def topic_quality(tc: float, td: float) -> float:
    return tc * td


_W2V_METRICS = ("cosine", "l1", "l2")


def w2v_quality(topics_top_words, emb, metric: str = "cosine") -> float:
    """Mean pairwise embedding distance inside each topic, averaged over
    topics (lower is better)."""
    if metric not in _W2V_METRICS:
        raise ValueError(f"metric must be one of {_W2V_METRICS}")
    per_topic = []
    for words in topics_top_words:
        vecs = emb.matrix(list(words))
        dists = []
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                dists.append(_pair_distance(vecs[i], vecs[j], metric))
        per_topic.append(float(np.mean(dists)) if dists else 0.0)
    return float(np.mean(per_topic))


def _pair_distance(u: np.ndarray, v: np.ndarray, metric: str) -> float:
    if metric == "cosine":
        nu = np.linalg.norm(u)
        nv = np.linalg.norm(v)
        if nu < 1e-12 or nv < 1e-12:
            return 0.0
        return float(1.0 - u @ v / (nu * nv))
    if metric == "l1":
        return float(np.abs(u - v).sum())
    return float(np.linalg.norm(u - v))


def metrics_report(topics_top10, topics_top25, stats: CooccurrenceStats,
                   emb, assignment: ClusterAssignment | None) -> dict:
    """Full evaluation document: corpus-level scores plus a per-topic
    breakdown. Clustering scores are omitted when no labels are available."""
    per_topic = []
    cv_scores = []
    npmi_scores = []
    for k, words in enumerate(topics_top10):
        cv_k = cv_coherence(words, stats)
        pairs = [npmi((w1, w2), stats)
                 for i, w1 in enumerate(words) for w2 in words[i + 1:]]
        npmi_k = float(np.mean(pairs)) if pairs else 0.0
        cv_scores.append(cv_k)
        npmi_scores.append(npmi_k)
        per_topic.append({"topic": k, "cv": cv_k, "npmi": npmi_k,
                          "words": list(words)})
    cv_mean = float(np.mean(cv_scores)) if cv_scores else 0.0
    td = topic_diversity(topics_top25)
    report = {
        "cv": cv_mean,
        "npmi_mean": float(np.mean(npmi_scores)) if npmi_scores else 0.0,
        "td": td,
        "tq": topic_quality(cv_mean, td),
        "w2v_cosine": w2v_quality(topics_top10, emb, "cosine"),
        "w2v_l1": w2v_quality(topics_top10, emb, "l1"),
        "w2v_l2": w2v_quality(topics_top10, emb, "l2"),
        "per_topic": per_topic,
    }
    if assignment is not None:
        p = purity(assignment)
        m = nmi(assignment)
        report["purity"] = p
        report["nmi"] = m
        report["pn"] = pn(p, m)
    else:
        logger.warning("no gold labels; purity/nmi/pn omitted from the report")
    return report
