"""Training loop: warm-up on the ELBO, then confidence-weighted topic
refinement toward backend-suggested word sets.

During refinement every topic's top-N words are sent to the suggestion
provider (memoized on the exact word set, so unchanged topics cost
nothing), the transport distance between the topic's renormalized top-word
distribution and a uniform distribution over the suggested words is
computed, and its confidence-weighted gradient flows back into the decoder
columns only. The gradient step sums the ELBO gradient and gamma times the
refinement gradient.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import evaluation, ntm
from .corpus import BowCorpus, EmbeddingTable
from .errors import ConfigError, EmptyDocument, NumericalOverflow
from .llm import (Confidence, ConfidenceMethod, SuggestionCache, Suggestion,
                  canonical_key, suggest)
from .ntm import NtmParams, TopicWords
from .ot import (DivergenceKind, cost_matrix, divergence,
                 divergence_grad_source, sinkhorn, union_support)

logger = logging.getLogger(__name__)

STEP_CSV_HEADER = "step,ntm_loss,refine_loss,total_loss,mean_confidence,parse_success_rate"
EPOCH_CSV_HEADER = "epoch,step,w2v_cosine,purity,nmi,pn"

# Refinement instances with near-identical supports can stall in the
# solver's plateau regime; cap the extra iterations and accept the
# near-converged duals (their error is far below the SGD noise floor).
REFINE_MAX_ITER = 2000

# Bound on concurrent in-flight suggestion requests per step.
MAX_INFLIGHT = 4


@dataclass
class TrainConfig:
    k_topics: int
    t_total: int
    t_refine: int | None = None          # defaults to t_total - 50
    n_top_words: int = 10
    m_refined: int = 10
    gamma: float = 200.0
    epsilon_ot: float = 0.05
    divergence: DivergenceKind = DivergenceKind.OT
    confidence_method: ConfidenceMethod = ConfidenceMethod.LABEL_TOKEN_PROB
    seed: int = 0
    lr: float = ntm.DEFAULT_LR
    batch_size: int = ntm.DEFAULT_BATCH
    hidden_size: int = ntm.DEFAULT_HIDDEN

    def __post_init__(self):
        if self.t_refine is None:
            self.t_refine = max(self.t_total - 50, 0)
        self.divergence = DivergenceKind(self.divergence)
        self.confidence_method = ConfidenceMethod(self.confidence_method)
        if self.k_topics < 2:
            raise ConfigError("k_topics must be >= 2")
        if self.n_top_words < 1:
            raise ConfigError("n_top_words must be >= 1")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not 0 <= self.t_refine <= self.t_total:
            raise ConfigError(
                f"t_refine={self.t_refine} outside [0, t_total={self.t_total}]")
        if self.batch_size < 1 or self.t_total < 1:
            raise ConfigError("batch_size and t_total must be >= 1")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.value if hasattr(v, "value") else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"k_topics", "t_total"} - set(d)
        if missing:
            raise ConfigError(f"missing required config keys: {sorted(missing)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None


@dataclass(frozen=True)
class RefinementRecord:
    topic_index: int
    original_words: TopicWords
    suggestion: Suggestion
    confidence: Confidence
    ot_cost: float
    step: int


@dataclass(frozen=True)
class StepRow:
    step: int
    ntm_loss: float
    refine_loss: float
    total_loss: float
    mean_confidence: float
    parse_success_rate: float


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    step: int
    w2v_cosine: float | None
    purity: float | None
    nmi: float | None
    pn: float | None


@dataclass
class MetricsLog:
    steps: list[StepRow] = field(default_factory=list)
    epochs: list[EpochRow] = field(default_factory=list)

    def write_step_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(STEP_CSV_HEADER + "\n")
            for r in self.steps:
                f.write(f"{r.step},{r.ntm_loss!r},{r.refine_loss!r},"
                        f"{r.total_loss!r},{r.mean_confidence!r},"
                        f"{r.parse_success_rate!r}\n")

    def write_epoch_csv(self, path) -> None:
        def fmt(v):
            return "" if v is None else repr(v)
        with open(path, "w", encoding="utf-8") as f:
            f.write(EPOCH_CSV_HEADER + "\n")
            for r in self.epochs:
                f.write(f"{r.epoch},{r.step},{fmt(r.w2v_cosine)},{fmt(r.purity)},"
                        f"{fmt(r.nmi)},{fmt(r.pn)}\n")


@dataclass(frozen=True)
class RefinementOutcome:
    loss: float
    grad_phi: np.ndarray
    topic_costs: dict[int, float]


def total_loss(ntm_loss: float, refine_loss: float, gamma: float,
               step: int, t_refine: int) -> float:
    """Combined objective: refinement only counts strictly after warm-up."""
    if step > t_refine:
        return ntm_loss + gamma * refine_loss
    return ntm_loss


def refinement_loss(params: NtmParams, topic_records: dict,
                    vocab, emb: EmbeddingTable, cfg: TrainConfig) -> RefinementOutcome:
    """Confidence-weighted alignment loss over the refined topics.

    For each topic with a usable suggestion: take the frozen top-N indices,
    renormalize the topic mass on them (equivalently, softmax of the
    selected decoder logits), transport it onto a uniform distribution over
    the suggested words under the embedding cosine cost, and add
    confidence * cost. The returned gradient is exact for the entropic
    transport value with the top-N selection held fixed; it touches only
    the selected rows of each refined decoder column, and is zero
    everywhere for topics whose suggestion failed.
    """
    grad_phi = np.zeros_like(params.dec_phi)
    loss = 0.0
    costs: dict[int, float] = {}
    for k in sorted(topic_records):
        tw, suggestion, confidence = topic_records[k]
        if not suggestion.refined_words:
            continue
        conf = confidence.value
        idx = np.array(tw.indices)
        logits = params.dec_phi[idx, k]
        a = ntm.softmax(logits)
        refined = list(suggestion.refined_words)
        if cfg.divergence is DivergenceKind.OT:
            c = cost_matrix(tw.words, refined, emb)
            u = np.full(len(refined), 1.0 / len(refined))
            try:
                res = sinkhorn(a, u, c, epsilon=cfg.epsilon_ot,
                               max_iter=REFINE_MAX_ITER)
            except NumericalOverflow as e:
                raise NumericalOverflow(f"topic {k}: {e}") from None
            cost_k = res.cost
            if not res.converged:
                logger.debug("topic %d transport stopped at max_iter; "
                             "using near-converged duals", k)
            g_a = conf * res.dual_f
        else:
            _, p, q, src_pos = union_support(tw.words, a, refined)
            cost_k = divergence(p, q, cfg.divergence)
            g_p = conf * divergence_grad_source(p, q, cfg.divergence)
            g_a = g_p[src_pos]
        loss += conf * cost_k
        costs[k] = cost_k
        g_logits = a * (g_a - float(a @ g_a))
        grad_phi[idx, k] += g_logits
    return RefinementOutcome(loss=loss, grad_phi=grad_phi, topic_costs=costs)


def infer_doc_topics(params: NtmParams, x) -> np.ndarray:
    """Posterior-mean topic proportions (noise-free encoding)."""
    if not x.counts:
        raise EmptyDocument("cannot infer topics for an empty document")
    return ntm.encode(x, params, np.zeros(params.n_topics)).z


def _gather_suggestions(params, vocab, provider, cache, cfg, stats):
    """Fetch (top-words, suggestion, confidence) per topic, via the cache.

    Distinct cache misses are queried once each, concurrently up to the
    in-flight bound; results are cached and accounted in topic order so
    runs stay reproducible regardless of completion order.
    """
    tws = {}
    keys = {}
    for k in range(cfg.k_topics):
        topic = ntm.topic_distribution(params, k)
        tws[k] = ntm.topic_words(topic, vocab, min(cfg.n_top_words, vocab.size))
        keys[k] = canonical_key(tws[k].words)

    missing = []
    seen = set()
    for k in sorted(tws):
        key = keys[k]
        if key not in seen and cache.get(key) is None:
            seen.add(key)
            missing.append((key, tws[k].words))
    if missing:
        def fetch(words):
            return suggest(provider, words, vocab, max_refined=cfg.m_refined,
                           method=cfg.confidence_method)

        if len(missing) == 1:
            outcomes = [fetch(missing[0][1])]
        else:
            with ThreadPoolExecutor(
                    max_workers=min(MAX_INFLIGHT, len(missing))) as pool:
                outcomes = list(pool.map(fetch, [w for _, w in missing]))
        for (key, _), outcome in zip(missing, outcomes):
            if outcome.error and outcome.error.startswith("transport"):
                logger.warning("suggestion left unrefined this step: %s",
                               outcome.error)
                continue
            stats["queries"] += 1
            if outcome.suggestion is None:
                stats["failures"] += 1
                cache.put(key, None, None)
            else:
                stats["parses"] += 1
                cache.put(key, outcome.suggestion, outcome.confidence)

    topic_records = {}
    for k in sorted(tws):
        cached = cache.get(keys[k])
        if cached is None or cached[0] is None:
            continue
        topic_records[k] = (tws[k], cached[0], cached[1])
    return topic_records


def train(corpus: BowCorpus, emb: EmbeddingTable, provider, cfg: TrainConfig,
          cache: SuggestionCache | None = None,
          eval_corpus: BowCorpus | None = None,
          out_dir=None, checkpoint_interval: int | None = None):
    """Run warm-up then refinement; returns (params, metrics, records).

    Deterministic given the seed and a deterministic provider: the random
    stream feeds parameter init, epoch shuffles and per-document noise, in
    that order, and the refinement path never touches it.
    """
    if not corpus.docs:
        raise ConfigError("corpus is empty")
    vocab = corpus.vocab
    rng = np.random.default_rng(cfg.seed)
    params = ntm.init_params(vocab.size, cfg.k_topics, cfg.hidden_size, rng)
    opt = ntm.Adam(params, lr=cfg.lr)
    cache = cache if cache is not None else SuggestionCache()
    metrics = MetricsLog()
    records: list[RefinementRecord] = []

    docs = corpus.docs
    n_docs = len(docs)
    batch = min(cfg.batch_size, n_docs)
    batches_per_epoch = (n_docs + batch - 1) // batch
    order = None
    epoch = 0

    for step in range(1, cfg.t_total + 1):
        pos = (step - 1) % batches_per_epoch
        if pos == 0:
            order = rng.permutation(n_docs)
        sel = order[pos * batch:(pos + 1) * batch]
        xs = [docs[i] for i in sel]
        noise = rng.standard_normal((len(xs), cfg.k_topics))
        loss, grads = ntm.batch_elbo(xs, params, noise)

        refine_val = 0.0
        mean_conf = 0.0
        success_rate = 1.0
        if step > cfg.t_refine and cfg.gamma > 0:
            stats = {"queries": 0, "parses": 0, "failures": 0}
            topic_records = _gather_suggestions(params, vocab, provider, cache,
                                                cfg, stats)
            outcome = refinement_loss(params, topic_records, vocab, emb, cfg)
            refine_val = outcome.loss
            grads.dec_phi += cfg.gamma * outcome.grad_phi
            if topic_records:
                mean_conf = float(np.mean(
                    [rec[2].value for rec in topic_records.values()]))
            if stats["queries"]:
                success_rate = stats["parses"] / stats["queries"]
            for k, (tw, sug, conf) in sorted(topic_records.items()):
                records.append(RefinementRecord(
                    topic_index=k, original_words=tw, suggestion=sug,
                    confidence=conf, ot_cost=outcome.topic_costs.get(k, 0.0),
                    step=step))

        step_total = total_loss(loss.total, refine_val, cfg.gamma, step,
                                cfg.t_refine)
        if not np.isfinite(step_total):
            raise NumericalOverflow(
                f"non-finite loss at step {step}: ntm={loss.total} "
                f"refine={refine_val}")
        opt.step(params, grads)
        if not params.all_finite():
            raise NumericalOverflow(f"non-finite parameter after step {step}")

        metrics.steps.append(StepRow(
            step=step, ntm_loss=loss.total, refine_loss=refine_val,
            total_loss=step_total, mean_confidence=mean_conf,
            parse_success_rate=success_rate))

        if pos == batches_per_epoch - 1:
            epoch += 1
            metrics.epochs.append(_epoch_row(epoch, step, params, vocab,
                                             emb, eval_corpus, cfg))
        if (out_dir is not None and checkpoint_interval
                and step % checkpoint_interval == 0 and step < cfg.t_total):
            ntm.save_checkpoint(params, os.path.join(out_dir, f"checkpoint_step{step}.json"),
                                vocab.sha256())

    if out_dir is not None:
        ntm.save_checkpoint(params, os.path.join(out_dir, "checkpoint.json"),
                            vocab.sha256())
    return params, metrics, records


def _epoch_row(epoch, step, params, vocab, emb, eval_corpus, cfg) -> EpochRow:
    top_words = []
    for k in range(cfg.k_topics):
        tw = ntm.topic_words(ntm.topic_distribution(params, k), vocab,
                             min(10, vocab.size))
        top_words.append(tw.words)
    try:
        w2v = evaluation.w2v_quality(top_words, emb, "cosine")
    except KeyError:
        w2v = None
    purity = nmi = pn = None
    if eval_corpus is not None and any(d.label for d in eval_corpus.docs):
        ca = cluster_assignment(params, eval_corpus)
        purity = evaluation.purity(ca)
        nmi = evaluation.nmi(ca)
        pn = evaluation.pn(purity, nmi)
    return EpochRow(epoch=epoch, step=step, w2v_cosine=w2v, purity=purity,
                    nmi=nmi, pn=pn)


def cluster_assignment(params: NtmParams, corpus: BowCorpus):
    """Assign each labeled document to its top-weighted topic."""
    assignments = []
    labels = []
    for doc in corpus.docs:
        if doc.label is None:
            continue
        z = infer_doc_topics(params, doc)
        assignments.append(int(np.argmax(z)))
        labels.append(doc.label)
    return evaluation.ClusterAssignment(assignments=assignments, labels=labels)


def export_topics(params: NtmParams, vocab, records) -> list[dict]:
    """Topic report rows: latest label and confidence per topic (null when
    the topic was never refined), top-10 words with probabilities."""
    latest: dict[int, RefinementRecord] = {}
    for rec in records:
        cur = latest.get(rec.topic_index)
        if cur is None or rec.step >= cur.step:
            latest[rec.topic_index] = rec
    rows = []
    for k in range(params.n_topics):
        tw = ntm.topic_words(ntm.topic_distribution(params, k), vocab,
                             min(10, vocab.size))
        rec = latest.get(k)
        rows.append({
            "topic": k,
            "label": " ".join(rec.suggestion.label) if rec else None,
            "words": list(tw.words),
            "probs": [float(p) for p in tw.probs],
            "confidence": rec.confidence.value if rec else None,
        })
    return rows


def save_topic_report(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def save_refinement_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps({
                "step": rec.step,
                "topic": rec.topic_index,
                "original_words": list(rec.original_words.words),
                "suggestion": rec.suggestion.to_dict(),
                "confidence": rec.confidence.to_dict(),
                "ot_cost": rec.ot_cost,
            }, sort_keys=True) + "\n")
