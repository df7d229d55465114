"""Logistic-normal VAE topic model with a single linear decoder.

The encoder is one softplus hidden layer producing the mean and
log-variance of a Gaussian over the latent topic space; a softmax of the
reparameterized sample gives the document-topic distribution, and a
log-softmax of `dec_phi @ z` reconstructs the word distribution. Gradients
are derived by hand (holding the noise sample fixed) and checked against
central finite differences in the test suite.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit, logsumexp

from .errors import FormatError, ShapeError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

DEFAULT_HIDDEN = 200
DEFAULT_LR = 2e-3
DEFAULT_BATCH = 200


@dataclass
class NtmParams:
    """All trainable arrays; dec_phi columns house the topics."""

    enc_w1: np.ndarray        # H x V
    enc_b1: np.ndarray        # H
    enc_w_mu: np.ndarray      # K x H
    enc_b_mu: np.ndarray      # K
    enc_w_logvar: np.ndarray  # K x H
    enc_b_logvar: np.ndarray  # K
    dec_phi: np.ndarray       # V x K

    @property
    def n_vocab(self) -> int:
        return self.dec_phi.shape[0]

    @property
    def n_topics(self) -> int:
        return self.dec_phi.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.enc_w1.shape[0]

    def field_arrays(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "NtmParams":
        return NtmParams(**{name: arr.copy() for name, arr in self.field_arrays()})

    def zeros_like(self) -> "NtmParams":
        return NtmParams(**{name: np.zeros_like(arr) for name, arr in self.field_arrays()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for _, arr in self.field_arrays())


@dataclass(frozen=True)
class EncoderOutput:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class Topic:
    dist: np.ndarray
    topic_index: int


@dataclass(frozen=True)
class TopicWords:
    indices: list[int]
    words: list[str]
    probs: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    kl: float
    total: float


def init_params(n_vocab: int, n_topics: int, n_hidden: int = DEFAULT_HIDDEN,
                rng: np.random.Generator | None = None) -> NtmParams:
    """Fan-in-scaled normal init for weights, zeros for biases."""
    rng = rng or np.random.default_rng(0)
    return NtmParams(
        enc_w1=rng.normal(0.0, 1.0 / np.sqrt(n_vocab), (n_hidden, n_vocab)),
        enc_b1=np.zeros(n_hidden),
        enc_w_mu=rng.normal(0.0, 1.0 / np.sqrt(n_hidden), (n_topics, n_hidden)),
        enc_b_mu=np.zeros(n_topics),
        enc_w_logvar=rng.normal(0.0, 1.0 / np.sqrt(n_hidden), (n_topics, n_hidden)),
        enc_b_logvar=np.zeros(n_topics),
        dec_phi=rng.normal(0.0, 0.02, (n_vocab, n_topics)),
    )


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return x - logsumexp(x, axis=axis, keepdims=True)


def _dense_batch(xs, n_vocab: int) -> np.ndarray:
    mat = np.zeros((len(xs), n_vocab))
    for r, doc in enumerate(xs):
        for i, c in doc.counts.items():
            if i >= n_vocab:
                raise ShapeError(f"word index {i} >= vocabulary size {n_vocab}")
            mat[r, i] = c
    return mat


class _Forward:
    """Cached intermediates of one batched forward pass."""

    __slots__ = ("x", "x_norm", "scale", "pre_h", "h", "mu", "logvar_raw",
                 "logvar", "clip_mask", "latent", "z", "logits", "logp",
                 "rec", "kl", "total", "noise")

    def __init__(self, x, params: NtmParams, noise):
        if x.shape[1] != params.n_vocab:
            raise ShapeError(f"document dimension {x.shape[1]} != V={params.n_vocab}")
        if noise.shape != (x.shape[0], params.n_topics):
            raise ShapeError(f"noise shape {noise.shape} != {(x.shape[0], params.n_topics)}")
        self.x = x
        self.noise = noise
        self.scale = x.sum(axis=1)
        if np.any(self.scale <= 0):
            raise ShapeError("empty document in batch")
        self.x_norm = x / self.scale[:, None]
        self.pre_h = self.x_norm @ params.enc_w1.T + params.enc_b1
        self.h = np.logaddexp(0.0, self.pre_h)
        self.mu = self.h @ params.enc_w_mu.T + params.enc_b_mu
        self.logvar_raw = self.h @ params.enc_w_logvar.T + params.enc_b_logvar
        self.logvar = np.clip(self.logvar_raw, LOGVAR_MIN, LOGVAR_MAX)
        self.clip_mask = ((self.logvar_raw > LOGVAR_MIN)
                          & (self.logvar_raw < LOGVAR_MAX)).astype(float)
        self.latent = self.mu + np.exp(0.5 * self.logvar) * noise
        self.z = softmax(self.latent, axis=1)
        self.logits = self.z @ params.dec_phi.T
        self.logp = log_softmax(self.logits, axis=1)
        self.rec = np.sum(x * self.logp, axis=1)
        self.kl = 0.5 * np.sum(np.exp(self.logvar) + self.mu ** 2 - 1.0 - self.logvar,
                               axis=1)
        self.total = -self.rec + self.kl


def _backward(fw: _Forward, params: NtmParams) -> NtmParams:
    """Gradient of the batch-mean total loss with respect to every field."""
    batch = fw.x.shape[0]
    probs = softmax(fw.logits, axis=1)
    # d(-rec)/d logits: softmax couples through the normalizer
    g_logits = fw.scale[:, None] * probs - fw.x
    g_phi = g_logits.T @ fw.z / batch
    g_z = g_logits @ params.dec_phi
    g_latent = fw.z * (g_z - np.sum(fw.z * g_z, axis=1, keepdims=True))
    g_mu = g_latent + fw.mu
    g_logvar = (g_latent * fw.noise * 0.5 * np.exp(0.5 * fw.logvar)
                + 0.5 * (np.exp(fw.logvar) - 1.0)) * fw.clip_mask
    g_w_mu = g_mu.T @ fw.h / batch
    g_b_mu = g_mu.mean(axis=0)
    g_w_lv = g_logvar.T @ fw.h / batch
    g_b_lv = g_logvar.mean(axis=0)
    g_h = g_mu @ params.enc_w_mu + g_logvar @ params.enc_w_logvar
    g_pre = g_h * expit(fw.pre_h)
    g_w1 = g_pre.T @ fw.x_norm / batch
    g_b1 = g_pre.mean(axis=0)
    return NtmParams(enc_w1=g_w1, enc_b1=g_b1, enc_w_mu=g_w_mu, enc_b_mu=g_b_mu,
                     enc_w_logvar=g_w_lv, enc_b_logvar=g_b_lv, dec_phi=g_phi)


def encode(x, params: NtmParams, noise: np.ndarray) -> EncoderOutput:
    """Map one document to its latent Gaussian and topic distribution.

    With the noise vector held fixed the output is deterministic; noise=0
    follows the posterior-mean path.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (params.n_topics,):
        raise ShapeError(f"noise length {noise.shape} != K={params.n_topics}")
    fw = _Forward(_dense_batch([x], params.n_vocab), params, noise[None, :])
    return EncoderOutput(mu=fw.mu[0], logvar=fw.logvar[0], z=fw.z[0])


def decode(z: np.ndarray, params: NtmParams) -> np.ndarray:
    """Log-probabilities over the vocabulary for a topic mixture z."""
    z = np.asarray(z, dtype=float)
    if z.shape != (params.n_topics,):
        raise ShapeError(f"z length {z.shape} != K={params.n_topics}")
    return log_softmax(params.dec_phi @ z)


def elbo_loss(x, params: NtmParams, noise: np.ndarray) -> LossBreakdown:
    """Single-sample negative ELBO for one document.

    reconstruction = sum_v x_v log p_v; kl is the closed-form divergence
    from N(mu, diag exp(logvar)) to N(0, I); total = -reconstruction + kl.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (params.n_topics,):
        raise ShapeError(f"noise length {noise.shape} != K={params.n_topics}")
    fw = _Forward(_dense_batch([x], params.n_vocab), params, noise[None, :])
    return LossBreakdown(reconstruction=float(fw.rec[0]), kl=float(fw.kl[0]),
                         total=float(fw.total[0]))


def grad_elbo(x, params: NtmParams, noise: np.ndarray) -> NtmParams:
    """Exact analytic gradient of elbo_loss(...).total, noise held fixed."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (params.n_topics,):
        raise ShapeError(f"noise length {noise.shape} != K={params.n_topics}")
    fw = _Forward(_dense_batch([x], params.n_vocab), params, noise[None, :])
    return _backward(fw, params)


def batch_elbo(xs, params: NtmParams, noise: np.ndarray):
    """Mean loss and mean gradients over a batch of documents."""
    fw = _Forward(_dense_batch(xs, params.n_vocab), params, noise)
    loss = LossBreakdown(reconstruction=float(fw.rec.mean()), kl=float(fw.kl.mean()),
                         total=float(fw.total.mean()))
    return loss, _backward(fw, params)


def topic_distribution(params: NtmParams, k: int) -> Topic:
    """Softmax of the k-th decoder column."""
    if not 0 <= k < params.n_topics:
        raise IndexError(f"topic index {k} out of range [0, {params.n_topics})")
    return Topic(dist=softmax(params.dec_phi[:, k]), topic_index=k)


def topic_words(topic: Topic, vocab, n: int) -> TopicWords:
    """Top-n words of a topic, probabilities descending, ties broken by
    smaller word index."""
    if not 1 <= n <= topic.dist.size:
        raise ValueError(f"n={n} outside [1, {topic.dist.size}]")
    order = np.argsort(-topic.dist, kind="stable")[:n]
    indices = [int(i) for i in order]
    return TopicWords(indices=indices,
                      words=[vocab.words[i] for i in indices],
                      probs=topic.dist[order])


class Adam:
    """Adaptive-moment optimizer over NtmParams-shaped gradients."""

    def __init__(self, params: NtmParams, lr: float = DEFAULT_LR,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = params.zeros_like()
        self._v = params.zeros_like()

    def step(self, params: NtmParams, grads: NtmParams) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.field_arrays():
            m = getattr(self._m, name)
            v = getattr(self._v, name)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            getattr(params, name)[...] -= update


def save_checkpoint(params: NtmParams, path, vocab_sha256: str) -> None:
    """Stable JSON layout: sizes, vocabulary hash and every weight array.

    Serialization is deterministic (sorted keys, repr floats), so identical
    parameters always produce byte-identical files.
    """
    doc = {
        "format": "topicloop-checkpoint-v1",
        "v": params.n_vocab,
        "k": params.n_topics,
        "h": params.n_hidden,
        "vocab_sha256": vocab_sha256,
    }
    for name, arr in params.field_arrays():
        doc[name] = arr.tolist()
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[NtmParams, str]:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != "topicloop-checkpoint-v1":
        raise FormatError(f"not a checkpoint file: {path}")
    kwargs = {}
    for f_ in fields(NtmParams):
        kwargs[f_.name] = np.asarray(doc[f_.name], dtype=float)
    params = NtmParams(**kwargs)
    expect = {"enc_w1": (doc["h"], doc["v"]), "enc_b1": (doc["h"],),
              "enc_w_mu": (doc["k"], doc["h"]), "enc_b_mu": (doc["k"],),
              "enc_w_logvar": (doc["k"], doc["h"]), "enc_b_logvar": (doc["k"],),
              "dec_phi": (doc["v"], doc["k"])}
    for name, shape in expect.items():
        if getattr(params, name).shape != shape:
            raise FormatError(f"checkpoint field {name} has shape "
                              f"{getattr(params, name).shape}, expected {shape}")
    return params, doc["vocab_sha256"]
