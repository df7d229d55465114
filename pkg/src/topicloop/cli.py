"""Command-line entry points wiring the library into reproducible runs.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import evaluation, figures, ntm, trainer
from .errors import ConfigError, FormatError, ParseFailure, TopicLoopError
from .llm import (ChatEndpointConfig, Confidence, HttpProvider, MockProvider,
                  MockScript, PromptSpec, Suggestion, SuggestionCache,
                  build_prompt, label_token_probability, parse_suggestion,
                  word_intrusion_confidence)

VOCAB_FILE = "vocab.txt"
TRAIN_BOW_FILE = "bow_train.jsonl"
TEST_BOW_FILE = "bow_test.jsonl"
EMBEDDINGS_FILE = "embeddings.txt"


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TopicLoopError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicloop",
        description="Train, refine and evaluate neural topic models with "
                    "LLM-suggested topic words.")
    parser.add_argument("--verbose", action="store_true",
                        help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build vocabulary and BoW files")
    p.add_argument("--corpus", required=True, help="line-delimited JSON corpus")
    p.add_argument("--embeddings", required=True, help="word embedding text file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--min-df", type=int, default=corpus_mod.DEFAULT_MIN_DF)
    p.add_argument("--max-df-ratio", type=float,
                   default=corpus_mod.DEFAULT_MAX_DF_RATIO)
    p.add_argument("--stopwords", default=None, help="stopword file override")
    p.add_argument("--test-corpus", default=None,
                   help="separate test corpus; otherwise --test-ratio splits")
    p.add_argument("--test-ratio", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0, help="seed for the split")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run warm-up and refinement training")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--data", required=True, help="preprocess output directory")
    p.add_argument("--llm", choices=["http", "mock"], default="mock")
    p.add_argument("--mock-script", default=None)
    p.add_argument("--mock-default", choices=["echo", "malformed"], default="echo")
    p.add_argument("--endpoint", default=None, help="chat endpoint base URL")
    p.add_argument("--model", default=None, help="chat model name")
    p.add_argument("--cache", default=None,
                   help="persist the suggestion cache to this JSONL file")
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--reference", required=True,
                   help="reference corpus for co-occurrence statistics")
    p.add_argument("--window", type=int, default=evaluation.DEFAULT_WINDOW)
    p.add_argument("--out", required=True, help="metrics report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("refine-once", help="one suggestion round for a word list")
    p.add_argument("--words", required=True, help="comma-separated topic words")
    p.add_argument("--llm", choices=["http", "mock"], default="mock")
    p.add_argument("--mock-script", default=None)
    p.add_argument("--mock-default", choices=["echo", "malformed"], default="echo")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--vocab", default=None,
                   help="vocabulary file for OOV filtering (optional)")
    p.add_argument("--n-label", type=int, default=2)
    p.add_argument("--m-refined", type=int, default=10)
    p.add_argument("--template", default="origin")
    p.set_defaults(func=cmd_refine_once)

    p = sub.add_parser("export-topics", help="write the topic report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--records", default=None,
                   help="refinement records JSONL from training")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_topics)

    p = sub.add_parser("emit-curves",
                       help="merge metrics CSVs into tidy long format and "
                            "render learning-curve figures")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--out", required=True, help="tidy CSV output path")
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering")
    p.add_argument("--figures-dir", default=None,
                   help="figure directory (default: next to the CSV)")
    p.set_defaults(func=cmd_emit_curves)

    return parser


def _make_provider(args, spec: PromptSpec):
    if args.llm == "mock":
        if args.mock_script:
            script = MockScript.from_file(args.mock_script,
                                          default_mode=args.mock_default)
        else:
            script = MockScript(default_mode=args.mock_default)
        return MockProvider(script, prompt_spec=spec)
    if not args.endpoint or not args.model:
        raise ConfigError("--llm http requires --endpoint and --model")
    endpoint = ChatEndpointConfig(base_url=args.endpoint, model=args.model)
    return HttpProvider(endpoint, prompt_spec=spec)


def cmd_preprocess(args) -> int:
    stopwords = (corpus_mod.load_stopwords(args.stopwords) if args.stopwords
                 else corpus_mod.default_stopwords())
    records = corpus_mod.load_corpus(args.corpus)
    if args.test_corpus:
        train_records = records
        test_records = corpus_mod.load_corpus(args.test_corpus)
    else:
        rng = np.random.default_rng(args.seed)
        n_test = int(round(len(records) * args.test_ratio))
        test_idx = set(rng.permutation(len(records))[:n_test].tolist())
        train_records = [r for i, r in enumerate(records) if i not in test_idx]
        test_records = [r for i, r in enumerate(records) if i in test_idx]

    token_docs = [corpus_mod.tokenize(text, stopwords) for text, _ in train_records]
    emb_full = corpus_mod.load_embeddings(args.embeddings)
    vocab = corpus_mod.build_vocabulary(token_docs, min_df=args.min_df,
                                        max_df_ratio=args.max_df_ratio,
                                        embed_vocab=emb_full.vectors.keys())
    emb = corpus_mod.EmbeddingTable(
        dim=emb_full.dim,
        vectors={w: emb_full.vectors[w] for w in vocab.words})

    train_bow = corpus_mod.make_corpus(train_records, vocab, stopwords, "train")
    test_bow = corpus_mod.make_corpus(test_records, vocab, stopwords, "test")

    os.makedirs(args.out, exist_ok=True)
    vocab.save(os.path.join(args.out, VOCAB_FILE))
    corpus_mod.save_bow(train_bow, os.path.join(args.out, TRAIN_BOW_FILE))
    corpus_mod.save_bow(test_bow, os.path.join(args.out, TEST_BOW_FILE))
    emb.save(os.path.join(args.out, EMBEDDINGS_FILE))

    for split, bow in (("train", train_bow), ("test", test_bow)):
        lengths = [doc.total for doc in bow.docs]
        avg_len = sum(lengths) / len(lengths) if lengths else 0.0
        n_labels = len({d.label for d in bow.docs if d.label is not None})
        print(f"{split}: docs={len(bow.docs)} V={vocab.size} "
              f"avg_len={avg_len:.1f} labels={n_labels}")
    return 0


def _load_data_dir(data_dir):
    vocab = corpus_mod.Vocabulary.load(os.path.join(data_dir, VOCAB_FILE))
    emb = corpus_mod.load_embeddings(os.path.join(data_dir, EMBEDDINGS_FILE),
                                     restrict_to=vocab)
    missing = [w for w in vocab.words if w not in emb]
    if missing:
        raise FormatError(
            f"{len(missing)} vocabulary word(s) lack embeddings, e.g. "
            f"{missing[:5]}")
    train = corpus_mod.load_bow(os.path.join(data_dir, TRAIN_BOW_FILE), vocab,
                                "train")
    test = None
    test_path = os.path.join(data_dir, TEST_BOW_FILE)
    if os.path.exists(test_path):
        test = corpus_mod.load_bow(test_path, vocab, "test")
    return vocab, emb, train, test


def cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as f:
        try:
            cfg_doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid config JSON: {e}") from None
    cfg = trainer.TrainConfig.from_dict(cfg_doc)
    vocab, emb, train_bow, test_bow = _load_data_dir(args.data)
    spec = PromptSpec(m_refined_words=cfg.m_refined)
    provider = _make_provider(args, spec)
    cache = SuggestionCache(args.cache) if args.cache else SuggestionCache()

    os.makedirs(args.out, exist_ok=True)
    params, metrics, records = trainer.train(
        train_bow, emb, provider, cfg, cache=cache, eval_corpus=test_bow,
        out_dir=args.out, checkpoint_interval=args.checkpoint_interval)

    metrics.write_step_csv(os.path.join(args.out, "metrics.csv"))
    metrics.write_epoch_csv(os.path.join(args.out, "epoch_metrics.csv"))
    trainer.save_topic_report(trainer.export_topics(params, vocab, records),
                              os.path.join(args.out, "topic_report.jsonl"))
    trainer.save_refinement_records(
        records, os.path.join(args.out, "refinement_records.jsonl"))
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"trained {cfg.t_total} steps; outputs in {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    vocab, emb, _, test_bow = _load_data_dir(args.data)
    params, vocab_hash = ntm.load_checkpoint(args.checkpoint)
    if vocab_hash != vocab.sha256():
        raise ConfigError("checkpoint vocabulary hash does not match the data "
                          "directory vocabulary")
    if test_bow is None or not test_bow.docs:
        raise ConfigError(f"no test split found in {args.data}")

    stopwords = corpus_mod.default_stopwords()
    reference = [corpus_mod.tokenize(text, stopwords)
                 for text, _ in corpus_mod.load_corpus(args.reference)]
    stats = evaluation.build_cooccurrence(reference, window=args.window)

    top10, top25 = [], []
    for k in range(params.n_topics):
        topic = ntm.topic_distribution(params, k)
        top10.append(ntm.topic_words(topic, vocab, min(10, vocab.size)).words)
        top25.append(ntm.topic_words(topic, vocab, min(25, vocab.size)).words)

    assignment = None
    if any(d.label is not None for d in test_bow.docs):
        assignment = trainer.cluster_assignment(params, test_bow)
    report = evaluation.metrics_report(top10, top25, stats, emb, assignment)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
    keys = [k for k in ("cv", "npmi_mean", "purity", "nmi", "pn", "td", "tq")
            if k in report]
    print(" ".join(f"{k}={report[k]:.4f}" for k in keys))
    return 0


def cmd_refine_once(args) -> int:
    words = [w.strip() for w in args.words.split(",") if w.strip()]
    if not words:
        raise ConfigError("--words must name at least one word")
    spec = PromptSpec(n_label_words=args.n_label, m_refined_words=args.m_refined,
                      template_id=args.template)
    provider = _make_provider(args, spec)
    prompt = build_prompt(words, spec)
    vocab = _load_vocab_or_permissive(args.vocab)

    completion = provider.complete(words)
    out: dict = {"prompt": prompt, "completion": completion.text}
    try:
        suggestion = parse_suggestion(completion, vocab, words,
                                      max_refined=args.m_refined)
    except ParseFailure as e:
        out["error"] = f"parse failure: {e}"
        print(json.dumps(out, indent=2, sort_keys=True))
        return 1
    out["suggestion"] = suggestion.to_dict()
    try:
        conf_prob = label_token_probability(completion, suggestion.label)
        out["confidence_label_token"] = conf_prob.value
    except TopicLoopError:
        out["confidence_label_token"] = None
    out["confidence_word_intrusion"] = word_intrusion_confidence(
        suggestion, len(words)).value
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


class _PermissiveVocab:
    def __contains__(self, word) -> bool:
        return True


def _load_vocab_or_permissive(path):
    if path is None:
        return _PermissiveVocab()
    return corpus_mod.Vocabulary.load(path)


def cmd_export_topics(args) -> int:
    vocab = corpus_mod.Vocabulary.load(os.path.join(args.data, VOCAB_FILE))
    params, vocab_hash = ntm.load_checkpoint(args.checkpoint)
    if vocab_hash != vocab.sha256():
        raise ConfigError("checkpoint vocabulary hash does not match the data "
                          "directory vocabulary")
    records = (trainer_records_from_file(args.records) if args.records else [])
    rows = trainer.export_topics(params, vocab, records)
    trainer.save_topic_report(rows, args.out)
    for row in rows:
        label = row["label"] if row["label"] is not None else "unlabeled"
        print(f"topic {row['topic']}: {label} | {' '.join(row['words'])}")
    return 0


def trainer_records_from_file(path) -> list:
    """Rehydrate just enough of the refinement records for reporting."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            records.append(trainer.RefinementRecord(
                topic_index=rec["topic"],
                original_words=ntm.TopicWords(indices=[],
                                              words=rec["original_words"],
                                              probs=np.array([])),
                suggestion=Suggestion.from_dict(rec["suggestion"]),
                confidence=Confidence.from_dict(rec["confidence"]),
                ot_cost=rec["ot_cost"],
                step=rec["step"],
            ))
    return records


def cmd_emit_curves(args) -> int:
    metric_cols = trainer.STEP_CSV_HEADER.split(",")[1:]
    tidy = []
    for path in args.metrics:
        run_id = os.path.splitext(os.path.basename(path))[0]
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != trainer.STEP_CSV_HEADER.split(","):
                raise FormatError(f"schema mismatch in {path}: {header}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    step = int(row[0])
                    values = [float(v) for v in row[1:len(metric_cols) + 1]]
                except (ValueError, IndexError):
                    raise FormatError(f"bad row in {path}", lineno) from None
                for col, value in zip(metric_cols, values):
                    tidy.append((run_id, step, col, value))

    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("run_id,step,metric,value\n")
        for run_id, step, metric, value in tidy:
            f.write(f"{run_id},{step},{metric},{value!r}\n")

    if not args.no_figures:
        fig_dir = args.figures_dir or out_dir
        written = figures.render_learning_curves(tidy, fig_dir)
        print(f"wrote {args.out} and {len(written)} figure(s) in {fig_dir}")
    else:
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
