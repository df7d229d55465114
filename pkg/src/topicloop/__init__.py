"""Neural topic modeling with in-training topic refinement.

A VAE topic model learns topics and document representations from
bag-of-words input; after a warm-up phase, each topic's top words are sent
to a language-model backend for suggested replacements, and a
confidence-weighted optimal-transport loss pulls the topic-word
distributions toward the suggestions.
"""

__version__ = "0.1.0"

from .corpus import (BowCorpus, BowDocument, EmbeddingTable, Vocabulary,
                     build_vocabulary, load_corpus, load_embeddings, to_bow,
                     tokenize)
from .llm import (ChatEndpointConfig, Confidence, ConfidenceMethod,
                  HttpProvider, MockProvider, MockScript, PromptSpec,
                  RawCompletion, Suggestion, SuggestionCache, build_prompt,
                  label_token_probability, mock_complete, parse_suggestion,
                  query, suggest, word_intrusion_confidence)
from .ntm import (EncoderOutput, LossBreakdown, NtmParams, Topic, TopicWords,
                  decode, elbo_loss, encode, grad_elbo, init_params,
                  load_checkpoint, save_checkpoint, topic_distribution,
                  topic_words)
from .ot import (CostMatrix, DivergenceKind, OtResult, cost_matrix, divergence,
                 entropic_value, ot_grad_source, sinkhorn)
from .trainer import (MetricsLog, RefinementRecord, TrainConfig, export_topics,
                      infer_doc_topics, refinement_loss, total_loss, train)

__all__ = [
    "BowCorpus", "BowDocument", "EmbeddingTable", "Vocabulary",
    "build_vocabulary", "load_corpus", "load_embeddings", "to_bow", "tokenize",
    "ChatEndpointConfig", "Confidence", "ConfidenceMethod", "HttpProvider",
    "MockProvider", "MockScript", "PromptSpec", "RawCompletion", "Suggestion",
    "SuggestionCache", "build_prompt", "label_token_probability",
    "mock_complete", "parse_suggestion", "query", "suggest",
    "word_intrusion_confidence",
    "EncoderOutput", "LossBreakdown", "NtmParams", "Topic", "TopicWords",
    "decode", "elbo_loss", "encode", "grad_elbo", "init_params",
    "load_checkpoint", "save_checkpoint", "topic_distribution", "topic_words",
    "CostMatrix", "DivergenceKind", "OtResult", "cost_matrix", "divergence",
    "entropic_value", "ot_grad_source", "sinkhorn",
    "MetricsLog", "RefinementRecord", "TrainConfig", "export_topics",
    "infer_doc_topics", "refinement_loss", "total_loss", "train",
]
