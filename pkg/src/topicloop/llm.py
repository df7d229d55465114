"""Topic-suggestion round trips against a chat endpoint or an offline mock.

A suggestion round takes a topic's top words, renders a step-by-step
prompt, queries the backend once (temperature 0, bounded new tokens,
logprobs requested), extracts the final JSON answer, filters the suggested
words against the corpus vocabulary, and scores the backend's confidence
either from the label token probabilities or from the fraction of input
words it kept.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

import requests

from .errors import (BackendError, MissingLogprobs, ParseFailure, SpanNotFound,
                     TransportError, UnknownTemplate)

logger = logging.getLogger(__name__)

DEFAULT_N_LABEL_WORDS = 2
DEFAULT_M_REFINED_WORDS = 10
DEFAULT_MAX_NEW_TOKENS = 300

# Step-by-step suggestion templates. Placeholders: {n} label word count,
# {m} refined word count, {words} comma-joined topic words.
TEMPLATES: dict[str, str] = {
    "origin": (
        "Analyze step-by-step and provide the final answer.\n"
        "\n"
        "Step 1. Given a set of words, summarize a topic (avoid using proper "
        "nouns as topics) by {n} words that covers most of those words. Note, "
        "only the topic, no other explanations.\n"
        "\n"
        "Step 2. Remove irrelevant words about the topic from the given word "
        "list. Note, only the removed words, no other explanations.\n"
        "\n"
        "Step 3. Add new relevant words (maximum {m} words) about the topic to "
        "the word list up to {m} words. Note, only the added words, no other "
        "explanations.\n"
        "\n"
        "Step 4. Provide your answer in json format as {{\"Topic\": \"<{n} Word "
        "Topic>\", \"Words\": \"<Refined {m} Word List>\"}}. Note, only {m} "
        "refined words allowed for the topic, and no follow up explanations.\n"
        "\n"
        "Word list: {words}"
    ),
    "variant_1": (
        "Perform the following actions sequentially and provide the final "
        "result:\n"
        "\n"
        "Step 1. After examining a set of words, condense a subject (avoid "
        "proper nouns) into {n} words that encompass most of those words. "
        "(Note: Only the subject, no further elaboration.)\n"
        "\n"
        "Step 2. Eliminate irrelevant words from the given word list based on "
        "the subject. (Note: Only the removed words, no further elaboration.)\n"
        "\n"
        "Step 3. Add new pertinent words (maximum {m} words) related to the "
        "subject to the word list until it reaches {m} words. (Note: Only the "
        "added words, no further elaboration.)\n"
        "\n"
        "Step 4. Present your response in JSON format as {{\"Topic\": \"<{n} "
        "Word Subject>\", \"Words\": \"<Refined {m} Word List>\"}}. Note: Only "
        "{m} refined words are permitted for the subject, and no follow-up "
        "explanations.\n"
        "\n"
        "Word list: {words}"
    ),
    "variant_2": (
        "Perform a meticulous examination and furnish the conclusive "
        "resolution.\n"
        "\n"
        "Stride 1. Bestowed a catalogue of vocabularies, condense a subject "
        "matter (circumvent the employment of proper appellations as subjects) "
        "by {n} words that envelop the preponderance of those vocabularies. "
        "(Heed, solely the subject, devoid of supplemental explication.)\n"
        "\n"
        "Stride 2. Dislodge irrelevant vocabularies concerning the subject from "
        "the granted vocabulary catalogue. (Heed, solely the dislodged "
        "vocabularies, devoid of supplemental explication.)\n"
        "\n"
        "Stride 3. Amalgamate novel applicable vocabularies (maximal {m} "
        "vocabularies) concerning the subject to the vocabulary catalogue up to "
        "{m} vocabularies. (Heed, solely the amalgamated vocabularies, devoid "
        "of supplemental explication.)\n"
        "\n"
        "Stride 4. Tender your resolution in json format as {{\"Topic\": \"<{n} "
        "Word Subject>\", \"Words\": \"<Refined {m} Word Catalogue>\"}}. Heed, "
        "solely {m} refined vocabularies permitted for the subject, and devoid "
        "of successive explication.\n"
        "\n"
        "Word list: {words}"
    ),
    "variant_3": (
        "Step-by-step analysis and final answer:\n"
        "\n"
        "Step 1. Given a set of words, summarize a topic (avoid using proper "
        "nouns as topics) by {n} words that covers most of those words. (Note, "
        "only the topic, no other explanations.)\n"
        "\n"
        "Step 2. Remove irrelevant words about the topic from the given word "
        "list. (Note, only the removed words, no other explanations.)\n"
        "\n"
        "Step 3. Add new relevant words (maximum {m} words) about the topic to "
        "the word list, keeping the total word count at {m} words. (Note, only "
        "the added words, no other explanations.)\n"
        "\n"
        "Step 4. Provide your answer in JSON format as {{\"Topic\": \"<{n} Word "
        "Topic>\", \"Words\": \"<Refined {m} Word List>\"}}. Note, only {m} "
        "refined words allowed for the topic, and no follow-up explanations.\n"
        "\n"
        "Word list: {words}"
    ),
    "variant_4": (
        "Break down the analysis into steps and give the final response.\n"
        "\n"
        "1. Look at a set of words and identify a {n}-word topic that sums up "
        "most of those words (don't use proper nouns as topics, just state the "
        "topic).\n"
        "\n"
        "2. Remove words from the list that don't relate to the topic (just "
        "list the removed words).\n"
        "\n"
        "3. Add new relevant words about the topic to the list, up to {m} words "
        "total (just list the new added words).\n"
        "\n"
        "4. Provide your response in JSON format: {{\"Topic\": \"<{n} Word "
        "Topic>\", \"Words\": \"<Refined {m} Word List>\"}}. Only include {m} "
        "words for the refined list, no explanations.\n"
        "\n"
        "Word list: {words}"
    ),
    "variant_5": (
        "Step-by-step analysis and provide the final answer in JSON format:\n"
        "\n"
        "Step 1: Based on the given set of words, summarize a topic using {n} "
        "words that encompass most of those words (avoid proper nouns).\n"
        "\n"
        "Step 2: Remove any irrelevant words from the given word list that do "
        "not relate to the summarized topic.\n"
        "\n"
        "Step 3: Add new relevant words (up to {m} words) that are related to "
        "the summarized topic.\n"
        "\n"
        "Step 4: Present your answer in the following JSON format: "
        "{{\"Topic\": \"<{n} Word Topic>\", \"Words\": \"<Refined {m} Word "
        "List>\"}}, where \"Topic\" contains the {n}-word summarized topic, and "
        "\"Words\" contains the refined list of {m} words related to that "
        "topic. Do not provide any additional explanations.\n"
        "\n"
        "Word list: {words}"
    ),
}

# Best-effort extraction of the explicit intruder list from the reasoning
# steps; the segment between the step-2 marker and the next step is scanned
# for original topic words.
STEP2_PATTERN = re.compile(
    r"(?im)^\s*(?:step\s*|stride\s*)?2[.:)]\s*(?P<body>.*?)(?=^\s*(?:step\s*|stride\s*)?[34][.:)]|\Z)",
    re.S,
)


class ConfidenceMethod(str, Enum):
    LABEL_TOKEN_PROB = "label_token_prob"
    WORD_INTRUSION = "word_intrusion"


@dataclass
class PromptSpec:
    n_label_words: int = DEFAULT_N_LABEL_WORDS
    m_refined_words: int = DEFAULT_M_REFINED_WORDS
    template_id: str = "origin"
    rendered: str = ""


@dataclass(frozen=True)
class RawCompletion:
    """Backend output; `tokens` is None when logprobs were unavailable."""

    text: str
    tokens: tuple[tuple[str, float], ...] | None
    finish_reason: str = "stop"

    @property
    def has_logprobs(self) -> bool:
        return self.tokens is not None


@dataclass(frozen=True)
class Suggestion:
    label: tuple[str, ...]
    refined_words: tuple[str, ...]
    removed_words: tuple[str, ...]
    dropped_oov: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"label": list(self.label), "refined_words": list(self.refined_words),
                "removed_words": list(self.removed_words),
                "dropped_oov": list(self.dropped_oov)}

    @classmethod
    def from_dict(cls, d) -> "Suggestion":
        return cls(label=tuple(d["label"]), refined_words=tuple(d["refined_words"]),
                   removed_words=tuple(d["removed_words"]),
                   dropped_oov=tuple(d["dropped_oov"]))


@dataclass(frozen=True)
class Confidence:
    value: float
    method: ConfidenceMethod

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method.value}

    @classmethod
    def from_dict(cls, d) -> "Confidence":
        return cls(value=float(d["value"]), method=ConfidenceMethod(d["method"]))


@dataclass
class ChatEndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "TOPICLOOP_API_KEY"
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS


def build_prompt(topic_words, spec: PromptSpec) -> str:
    """Render the suggestion prompt for a topic's word list.

    The rendering is deterministic; the default template follows the
    four-step structure (label, intruders, additions, JSON answer).
    """
    if not topic_words:
        raise ValueError("topic_words must be nonempty")
    template = TEMPLATES.get(spec.template_id)
    if template is None:
        raise UnknownTemplate(
            f"{spec.template_id!r}; known: {sorted(TEMPLATES)}")
    spec.rendered = template.format(n=spec.n_label_words, m=spec.m_refined_words,
                                    words=", ".join(topic_words))
    return spec.rendered


def query(endpoint: ChatEndpointConfig, prompt: str,
          _sleep=time.sleep) -> RawCompletion:
    """One chat-completion request: temperature 0, logprobs requested.

    Transient failures (connection errors, 5xx) are retried with
    exponential backoff; other non-2xx statuses raise BackendError. A
    backend that omits logprobs yields tokens=None rather than an error.
    """
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(endpoint.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": 0,
        "max_tokens": endpoint.max_new_tokens,
        "logprobs": True,
    }
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    last_error = None
    for attempt in range(endpoint.max_attempts):
        if attempt:
            _sleep(endpoint.backoff * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=body, headers=headers,
                                 timeout=endpoint.timeout)
        except requests.RequestException as e:
            last_error = e
            logger.warning("chat request failed (attempt %d/%d): %s",
                           attempt + 1, endpoint.max_attempts, e)
            continue
        if 500 <= resp.status_code < 600:
            last_error = BackendError(f"HTTP {resp.status_code}")
            logger.warning("chat backend 5xx (attempt %d/%d)", attempt + 1,
                           endpoint.max_attempts)
            continue
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError:
            raise BackendError(
                f"non-JSON response body: {resp.text[:200]!r}") from None
        return _parse_response(payload)
    raise TransportError(
        f"giving up after {endpoint.max_attempts} attempts: {last_error}")


def _parse_response(payload) -> RawCompletion:
    try:
        choice = payload["choices"][0]
        text = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise BackendError(f"unexpected response shape: {e}") from None
    if not isinstance(text, str):
        raise BackendError(f"message content is {type(text).__name__}, "
                           "expected string")
    finish = choice.get("finish_reason", "stop")
    tokens = None
    lp = choice.get("logprobs")
    if lp and lp.get("content"):
        try:
            tokens = tuple((t["token"], float(t["logprob"])) for t in lp["content"])
        except (KeyError, TypeError, ValueError):
            tokens = None
    if tokens is None:
        logger.info("backend returned no token logprobs")
    return RawCompletion(text=text, tokens=tokens, finish_reason=finish)


def _last_json_object(text: str):
    """Return (start_offset, obj) of the last decodable JSON object that
    carries both "Topic" and "Words"."""
    decoder = json.JSONDecoder()
    found = None
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and "Topic" in obj and "Words" in obj:
            found = (m.start(), obj)
    return found


def _word_list(value) -> list[str]:
    if isinstance(value, str):
        parts = re.split(r"[,;]", value)
        return [p.strip() for p in parts if p.strip()]
    if isinstance(value, list):
        return [str(v).strip() for v in value if str(v).strip()]
    return []


def parse_suggestion(completion: RawCompletion, vocab, original_words,
                     max_refined: int | None = None,
                     step2_pattern: re.Pattern = STEP2_PATTERN) -> Suggestion:
    """Extract the structured suggestion from a completion.

    The last JSON object holding "Topic" and "Words" wins. Suggested words
    are lowercased, deduplicated preserving order, filtered against the
    vocabulary (rejects recorded under dropped_oov) and truncated to
    `max_refined`. Intruders come from the explicit step-2 list when the
    reasoning text has one, otherwise from the set difference against the
    kept words.
    """
    hit = _last_json_object(completion.text)
    if hit is None:
        raise ParseFailure("no JSON object with \"Topic\" and \"Words\" keys")
    json_start, obj = hit
    label = tuple(str(obj["Topic"]).split())
    if not label:
        raise ParseFailure("empty \"Topic\" value")
    raw_words = _word_list(obj["Words"])

    seen = set()
    suggested = []
    for w in raw_words:
        lw = w.lower()
        if lw and lw not in seen:
            seen.add(lw)
            suggested.append(lw)
    refined = [w for w in suggested if w in vocab]
    dropped = [w for w in suggested if w not in vocab]
    if max_refined is not None:
        refined = refined[:max_refined]

    original_lower = [w.lower() for w in original_words]
    removed = _removed_from_steps(completion.text[:json_start], original_lower,
                                  step2_pattern)
    if removed is None:
        removed = [w for w in original_lower if w not in seen]
    return Suggestion(label=label, refined_words=tuple(refined),
                      removed_words=tuple(removed), dropped_oov=tuple(dropped))


def _removed_from_steps(cot_text: str, original_lower, pattern) -> list[str] | None:
    matches = list(pattern.finditer(cot_text))
    if not matches:
        return None
    body = matches[-1].group("body").lower()
    mentioned = set(re.findall(r"[a-z]+", body))
    return [w for w in original_lower if w in mentioned]


def label_token_probability(completion: RawCompletion, label) -> Confidence:
    """Product of the token probabilities over the label's span.

    The span is the last occurrence of the space-joined label in the
    completion text (which is where the JSON "Topic" value sits); tokens
    overlapping any label character contribute their logprob.
    """
    if not label:
        raise ValueError("label must be nonempty")
    if completion.tokens is None:
        raise MissingLogprobs("backend supplied no token logprobs")
    label_str = " ".join(label)
    start = completion.text.rfind(label_str)
    if start < 0:
        raise SpanNotFound(f"label {label_str!r} not found in completion text")
    end = start + len(label_str)
    pos = 0
    total = 0.0
    matched = False
    for tok, lp in completion.tokens:
        tok_start, tok_end = pos, pos + len(tok)
        pos = tok_end
        if tok_start < end and tok_end > start:
            total += lp
            matched = True
    if not matched:
        raise SpanNotFound("label span lies outside the supplied tokens")
    return Confidence(value=math.exp(total),
                      method=ConfidenceMethod.LABEL_TOKEN_PROB)


def word_intrusion_confidence(suggestion: Suggestion, n_original: int) -> Confidence:
    """1 minus the fraction of original topic words flagged as intruders."""
    if n_original < 1:
        raise ValueError("n_original must be >= 1")
    n_removed = min(len(suggestion.removed_words), n_original)
    return Confidence(value=1.0 - n_removed / n_original,
                      method=ConfidenceMethod.WORD_INTRUSION)


def canonical_key(topic_words) -> str:
    """Sorted, comma-joined word list; the cache and mock-script key."""
    return ",".join(sorted(topic_words))


def _synthetic_tokens(text: str, logprob: float = -0.01):
    chunks = re.findall(r"\S+\s*|\s+", text)
    return tuple((c, logprob) for c in chunks)


@dataclass
class MockScript:
    """Canned completions keyed by canonical word sets.

    Unknown keys fall back to `default_mode`: "echo" yields a well-formed
    completion that keeps the queried words, "malformed" yields text the
    parser rejects (for failure-path tests).
    """

    entries: dict[str, RawCompletion] = field(default_factory=dict)
    default_mode: str = "echo"

    @classmethod
    def from_file(cls, path, default_mode: str = "echo") -> "MockScript":
        entries = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                tokens = None
                if rec.get("logprobs") is not None:
                    tokens = tuple((t, float(lp)) for t, lp in rec["logprobs"])
                entries[rec["key"]] = RawCompletion(
                    text=rec["text"], tokens=tokens,
                    finish_reason=rec.get("finish_reason", "stop"))
        return cls(entries=entries, default_mode=default_mode)


def mock_complete(topic_words, script: MockScript) -> RawCompletion:
    """Deterministic offline stand-in for query()."""
    key = canonical_key(topic_words)
    if key in script.entries:
        return script.entries[key]
    if script.default_mode == "malformed":
        text = "I am not sure what these words have in common."
        return RawCompletion(text=text, tokens=_synthetic_tokens(text))
    words = list(topic_words)
    text = (
        "Step 1. general terms\n"
        "Step 2. none\n"
        "Step 3. none\n"
        'Step 4. {"Topic": "general terms", "Words": '
        + json.dumps(words) + "}"
    )
    return RawCompletion(text=text, tokens=_synthetic_tokens(text))


class SuggestionCache:
    """Suggestion/confidence pairs memoized on canonical topic-word keys.

    Parse failures are cached as None entries so a stable-but-unparseable
    word set is not re-queried every step. Writes append to a JSONL file
    when a path is configured; persistence failures are logged, never
    raised.
    """

    def __init__(self, path=None):
        self._lock = threading.Lock()
        self._data: dict[str, tuple[Suggestion | None, Confidence | None]] = {}
        self._path = path
        if path is not None:
            self._load()

    def _load(self):
        try:
            with open(self._path, encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    sug = (Suggestion.from_dict(rec["suggestion"])
                           if rec.get("suggestion") else None)
                    conf = (Confidence.from_dict(rec["confidence"])
                            if rec.get("confidence") else None)
                    self._data[rec["key"]] = (sug, conf)
        except FileNotFoundError:
            pass
        except (OSError, json.JSONDecodeError, KeyError) as e:
            logger.warning("cache load failed (%s); starting empty", e)
            self._data = {}

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key) -> bool:
        with self._lock:
            return key in self._data

    def get(self, key: str):
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, suggestion: Suggestion | None,
            confidence: Confidence | None) -> None:
        with self._lock:
            self._data[key] = (suggestion, confidence)
            if self._path is None:
                return
            rec = {"key": key,
                   "suggestion": suggestion.to_dict() if suggestion else None,
                   "confidence": confidence.to_dict() if confidence else None}
            try:
                with open(self._path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
            except OSError as e:
                logger.warning("cache write failed (non-fatal): %s", e)


class MockProvider:
    """Suggestion provider backed by a MockScript; bit-for-bit reproducible."""

    def __init__(self, script: MockScript, prompt_spec: PromptSpec | None = None):
        self.script = script
        self.prompt_spec = prompt_spec or PromptSpec()
        self.call_count = 0
        self._lock = threading.Lock()

    def complete(self, topic_words) -> RawCompletion:
        with self._lock:
            self.call_count += 1
        return mock_complete(topic_words, self.script)


class HttpProvider:
    """Suggestion provider that renders the prompt and queries the endpoint.

    Safe for concurrent completion calls up to the trainer's in-flight
    bound; each call renders its own prompt.
    """

    def __init__(self, endpoint: ChatEndpointConfig,
                 prompt_spec: PromptSpec | None = None):
        self.endpoint = endpoint
        self.prompt_spec = prompt_spec or PromptSpec()
        self.call_count = 0
        self._lock = threading.Lock()

    def complete(self, topic_words) -> RawCompletion:
        with self._lock:
            self.call_count += 1
        spec = PromptSpec(n_label_words=self.prompt_spec.n_label_words,
                          m_refined_words=self.prompt_spec.m_refined_words,
                          template_id=self.prompt_spec.template_id)
        return query(self.endpoint, build_prompt(topic_words, spec))


@dataclass(frozen=True)
class SuggestOutcome:
    suggestion: Suggestion | None
    confidence: Confidence | None
    completion: RawCompletion | None
    error: str | None = None


def suggest(provider, topic_words, vocab, max_refined: int | None = None,
            method: ConfidenceMethod = ConfidenceMethod.LABEL_TOKEN_PROB) -> SuggestOutcome:
    """One full suggestion round: complete, parse, filter, score.

    Parse failures and transport failures are reported in the outcome
    rather than raised, so callers can degrade to an unrefined topic.
    Confidence falls back to word intrusion whenever label token
    probabilities are unavailable.
    """
    try:
        completion = provider.complete(topic_words)
    except (TransportError, BackendError) as e:
        return SuggestOutcome(None, None, None, error=f"transport: {e}")
    try:
        suggestion = parse_suggestion(completion, vocab, topic_words,
                                      max_refined=max_refined)
    except ParseFailure as e:
        return SuggestOutcome(None, None, completion, error=f"parse: {e}")
    confidence = None
    if method is ConfidenceMethod.LABEL_TOKEN_PROB:
        try:
            confidence = label_token_probability(completion, suggestion.label)
        except (MissingLogprobs, SpanNotFound) as e:
            logger.debug("label token probability unavailable (%s); "
                         "falling back to word intrusion", e)
    if confidence is None:
        confidence = word_intrusion_confidence(suggestion, len(list(topic_words)))
    return SuggestOutcome(suggestion, confidence, completion)
