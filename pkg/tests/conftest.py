"""Shared fixtures: tiny deterministic corpora, embeddings, and the planted
three-topic synthetic benchmark used by the trainer and acceptance tests."""
import json
import math

import numpy as np
import pytest

from topicloop.corpus import BowCorpus, BowDocument, EmbeddingTable, Vocabulary
from topicloop.llm import RawCompletion

N_BLOCKS = 3
BLOCK_SIZE = 20
PLANTED_V = N_BLOCKS * BLOCK_SIZE
PLANTED_CONFIDENCE = 0.9


def make_doc(counts, label=None):
    return BowDocument(counts=dict(counts), label=label)


@pytest.fixture(scope="session")
def planted():
    """Synthetic corpus with three planted 20-word topics.

    300 train / 120 test documents of length ~40; each document draws 90%
    of its tokens from one planted block and 10% from the rest of the
    vocabulary. Embeddings cluster by block so transport costs reflect the
    planted structure.
    """
    rng = np.random.default_rng(20240601)
    words = [f"w{i:02d}" for i in range(PLANTED_V)]
    vocab = Vocabulary.from_words(words)
    blocks = [words[b * BLOCK_SIZE:(b + 1) * BLOCK_SIZE] for b in range(N_BLOCKS)]

    dim = 8
    centers = np.zeros((N_BLOCKS, dim))
    for b in range(N_BLOCKS):
        centers[b, b] = 1.0
    vectors = {}
    for b, block in enumerate(blocks):
        for w in block:
            v = centers[b] + 0.15 * rng.standard_normal(dim)
            vectors[w] = v / np.linalg.norm(v)
    emb = EmbeddingTable(dim=dim, vectors=vectors)

    def draw_split(n_docs, split):
        docs = []
        for d in range(n_docs):
            b = d % N_BLOCKS
            length = int(rng.poisson(40)) or 40
            counts = {}
            for _ in range(length):
                if rng.random() < 0.9:
                    w = blocks[b][int(rng.integers(BLOCK_SIZE))]
                else:
                    w = words[int(rng.integers(PLANTED_V))]
                counts[vocab.index[w]] = counts.get(vocab.index[w], 0) + 1
            docs.append(BowDocument(counts=counts, label=f"L{b}"))
        return BowCorpus(docs=tuple(docs), vocab=vocab, split=split)

    return {
        "vocab": vocab,
        "emb": emb,
        "blocks": blocks,
        "train": draw_split(300, "train"),
        "test": draw_split(120, "test"),
    }


class PlantedProvider:
    """Mock suggestion backend that always proposes the best-matching
    planted block with a fixed label-token confidence."""

    def __init__(self, blocks, confidence=PLANTED_CONFIDENCE, m_refined=10):
        self.blocks = [list(b) for b in blocks]
        self.confidence = confidence
        self.m_refined = m_refined
        self.call_count = 0

    def complete(self, topic_words):
        self.call_count += 1
        overlap = [len(set(topic_words) & set(b)) for b in self.blocks]
        b = int(np.argmax(overlap))
        suggested = self.blocks[b][:self.m_refined]
        label = f"planted block{b}"
        pieces = [
            (f"Step 1. {label}\n", 0.0),
            ("Step 2. none\n", 0.0),
            (f"Step 3. {', '.join(suggested)}\n", 0.0),
            ('Step 4. {"Topic": "', 0.0),
            ("planted", math.log(self.confidence)),
            (f" block{b}", 0.0),
            ('", "Words": ', 0.0),
            (json.dumps(suggested), 0.0),
            ("}", 0.0),
        ]
        text = "".join(p for p, _ in pieces)
        return RawCompletion(text=text, tokens=tuple(pieces))


@pytest.fixture
def planted_provider(planted):
    return PlantedProvider(planted["blocks"])


@pytest.fixture
def small_vocab():
    return Vocabulary.from_words(
        ["apple", "banana", "cherry", "date", "elder", "fig", "grape", "kiwi"])


@pytest.fixture
def small_emb(small_vocab):
    rng = np.random.default_rng(5)
    vectors = {w: rng.standard_normal(4) for w in small_vocab.words}
    return EmbeddingTable(dim=4, vectors=vectors)
