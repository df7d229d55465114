"""Corpus ingestion: tokenization, vocabulary construction, bag-of-words
vectors and word embedding tables.

All types built here are immutable after construction and safe to share.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import EmptyDocument, EmptyVocabulary, FormatError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z]+")

DEFAULT_MIN_DF = 5
DEFAULT_MAX_DF_RATIO = 0.8


def default_stopwords() -> frozenset[str]:
    """English stopword list shipped with the package."""
    text = resources.files("topicloop").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(text.split())


def load_stopwords(path) -> frozenset[str]:
    """Read a plain-text stopword file, one word per line."""
    with open(path, encoding="utf-8") as f:
        return frozenset(w.strip() for w in f if w.strip())


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional word <-> index map over the bag-of-words space.

    `index[words[i]] == i` for all i; indices are dense in [0, size).
    """

    words: tuple[str, ...]
    index: dict[str, int] = field(compare=False)

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        words = tuple(words)
        return cls(words=words, index={w: i for i, w in enumerate(words)})

    @property
    def size(self) -> int:
        return len(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self.index

    def sha256(self) -> str:
        """Hash of the ordered word list; identifies the BoW space."""
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        """One word per line; line number equals the word index."""
        with open(path, "w", encoding="utf-8") as f:
            for w in self.words:
                f.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            words = [line.rstrip("\n") for line in f if line.strip()]
        if not words:
            raise EmptyVocabulary(f"no words in {path}")
        return cls.from_words(words)


@dataclass(frozen=True)
class BowDocument:
    """Sparse count vector; indices into a Vocabulary, counts >= 1."""

    counts: dict[int, int]
    label: str | None = None

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def dense(self, size: int) -> np.ndarray:
        x = np.zeros(size)
        for i, c in self.counts.items():
            x[i] = c
        return x


@dataclass(frozen=True)
class BowCorpus:
    """Documents sharing one vocabulary; split is 'train' or 'test'."""

    docs: tuple[BowDocument, ...]
    vocab: Vocabulary
    split: str = "train"

    def __len__(self) -> int:
        return len(self.docs)

    def labels(self) -> list[str | None]:
        return [d.label for d in self.docs]

    def dense_matrix(self) -> np.ndarray:
        v = self.vocab.size
        mat = np.zeros((len(self.docs), v))
        for r, doc in enumerate(self.docs):
            for i, c in doc.counts.items():
                mat[r, i] = c
        return mat


class EmbeddingTable:
    """Pre-trained word vectors with a uniform dimension."""

    def __init__(self, dim: int, vectors: dict[str, np.ndarray]):
        self.dim = dim
        self.vectors = vectors

    def __contains__(self, word) -> bool:
        return word in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, word) -> np.ndarray:
        return self.vectors[word]

    def words(self):
        return self.vectors.keys()

    def matrix(self, words) -> np.ndarray:
        """Stack vectors for `words` into a (len(words), dim) array."""
        return np.stack([self.vectors[w] for w in words])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for w, vec in self.vectors.items():
                f.write(w + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def tokenize(raw_text: str, stopwords) -> list[str]:
    """Lowercase alphabetic tokens, stopwords and single-letter tokens removed."""
    tokens = _TOKEN_RE.findall(raw_text.lower())
    return [t for t in tokens if len(t) >= 2 and t not in stopwords]


def build_vocabulary(token_docs, min_df: int = DEFAULT_MIN_DF,
                     max_df_ratio: float = DEFAULT_MAX_DF_RATIO,
                     embed_vocab=None) -> Vocabulary:
    """Build a vocabulary from tokenized documents.

    A word is retained iff min_df <= df(word) < max_df_ratio * num_docs
    and (when `embed_vocab` is given) the word has a pre-trained embedding.
    Words are sorted lexicographically so indices are stable across runs.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    if not 0 < max_df_ratio <= 1:
        raise ValueError("max_df_ratio must be in (0, 1]")
    df: Counter[str] = Counter()
    for tokens in token_docs:
        df.update(set(tokens))
    n_docs = len(token_docs)
    cutoff = max_df_ratio * n_docs
    kept = [
        w for w, d in df.items()
        if min_df <= d < cutoff and (embed_vocab is None or w in embed_vocab)
    ]
    if not kept:
        raise EmptyVocabulary(
            f"no word passed the filters (min_df={min_df}, "
            f"max_df_ratio={max_df_ratio}, {n_docs} docs)")
    return Vocabulary.from_words(sorted(kept))


def to_bow(tokens, vocab: Vocabulary) -> BowDocument:
    """Count in-vocabulary tokens; out-of-vocabulary tokens are dropped."""
    counts: Counter[int] = Counter()
    for t in tokens:
        i = vocab.index.get(t)
        if i is not None:
            counts[i] += 1
    if not counts:
        raise EmptyDocument("no token is in the vocabulary")
    return BowDocument(counts=dict(counts))


def load_embeddings(path, restrict_to=None) -> EmbeddingTable:
    """Parse a text embedding file, one `word v1 v2 ... vD` line per word.

    The dimension is inferred from the first line; inconsistent dimensions
    or unparseable floats raise FormatError with the offending line number.
    When `restrict_to` is given only those words are kept.
    """
    keep = None
    if restrict_to is not None:
        keep = set(restrict_to.words) if isinstance(restrict_to, Vocabulary) else set(restrict_to)
    dim = None
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            word, values = parts[0], parts[1:]
            if dim is None:
                if not values:
                    raise FormatError("no vector components", lineno)
                dim = len(values)
            elif len(values) != dim:
                raise FormatError(
                    f"expected {dim} components, got {len(values)}", lineno)
            if keep is not None and word not in keep:
                continue
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as e:
                raise FormatError(str(e), lineno) from None
            if not np.all(np.isfinite(vec)):
                raise FormatError("non-finite embedding component", lineno)
            vectors[word] = vec
    if dim is None:
        raise FormatError(f"empty embedding file: {path}")
    return EmbeddingTable(dim=dim, vectors=vectors)


def load_corpus(path) -> list[tuple[str, str | None]]:
    """Read line-delimited JSON records with a required "text" field and an
    optional "label" field; record order is preserved exactly."""
    records: list[tuple[str, str | None]] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"invalid JSON: {e.msg}", lineno) from None
            if not isinstance(obj, dict) or "text" not in obj:
                raise FormatError('missing required field "text"', lineno)
            if not isinstance(obj["text"], str):
                raise FormatError('"text" must be a string', lineno)
            label = obj.get("label")
            if label is not None and not isinstance(label, str):
                raise FormatError('"label" must be a string or null', lineno)
            records.append((obj["text"], label))
    return records


def make_corpus(records, vocab: Vocabulary, stopwords, split: str = "train") -> BowCorpus:
    """Tokenize and BoW-encode raw records; empty documents are dropped
    with a logged warning rather than zero-padded."""
    docs = []
    dropped = 0
    for text, label in records:
        tokens = tokenize(text, stopwords)
        try:
            bow = to_bow(tokens, vocab)
        except EmptyDocument:
            dropped += 1
            continue
        docs.append(BowDocument(counts=bow.counts, label=label))
    if dropped:
        logger.warning("dropped %d empty document(s) from %s split", dropped, split)
    return BowCorpus(docs=tuple(docs), vocab=vocab, split=split)


def save_bow(corpus: BowCorpus, path) -> None:
    """Line-delimited JSON: {"counts": {"<idx>": <count>}, "label": <str|null>}."""
    with open(path, "w", encoding="utf-8") as f:
        for doc in corpus.docs:
            rec = {"counts": {str(i): c for i, c in sorted(doc.counts.items())},
                   "label": doc.label}
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_bow(path, vocab: Vocabulary, split: str = "train") -> BowCorpus:
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                counts = {int(i): int(c) for i, c in rec["counts"].items()}
            except (json.JSONDecodeError, KeyError, ValueError, TypeError):
                raise FormatError("malformed BoW record", lineno) from None
            if any(i < 0 or i >= vocab.size for i in counts):
                raise FormatError("word index out of vocabulary range", lineno)
            if any(c < 1 for c in counts.values()):
                raise FormatError("counts must be >= 1", lineno)
            if not counts:
                raise FormatError("empty document", lineno)
            docs.append(BowDocument(counts=counts, label=rec.get("label")))
    return BowCorpus(docs=tuple(docs), vocab=vocab, split=split)
