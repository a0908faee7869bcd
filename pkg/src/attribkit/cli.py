"""Command-line entry point.

Subcommands: ingest, train, attribute, eval-words, eval-columns, eval-filters,
steer, serve.  Option precedence is CLI flag > --config file > built-in
default, and every run that writes output also writes the fully resolved
configuration next to it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attribution as amod
from . import corpus as cmod
from . import evaluation as emod
from . import model as mmod

OUTDIR_ENV = "ATTRIBKIT_OUTDIR"

REPORT_NOTES = [
    "attribution targets the pre-softmax class logit",
    "relevance propagation uses a sign-matched epsilon stabilizer whose mass is redistributed to keep layer totals conserved (biases absorb their own share)",
    "weighted document embeddings use attributions toward each document's true class, so held-out embeddings carry label information (leakage caveat)",
    "pad embedding rows are trained like every other row",
]

DEFAULTS: dict[str, dict] = {
    "ingest": {
        "input": None, "format": "csv", "text_field": "text", "label_field": None,
        "train_frac": 0.8, "seed": 0, "min_count": 1, "max_size": None,
        "seq_len": 64, "out": None,
    },
    "train": {
        "corpus": None, "out": None, "embed_dim": 32, "filters": 32,
        "widths": "3,4,5", "epochs": 5, "batch_size": 32, "learning_rate": 0.1,
        "optimizer": "sgd", "bias": True, "epsilon_lrp": 0.01, "seed": 0,
    },
    "attribute": {
        "corpus": None, "params": None, "doc_ids": None, "method": "lrp",
        "target_class": "true", "out": None,
    },
    "eval-words": {
        "corpus": None, "params": None, "methods": "none,lrp,sa",
        "classifiers": "knn,linear", "knn_k": 5, "out": None,
    },
    "eval-columns": {
        "corpus": None, "params": None, "methods": "lrp,sa",
        "policies": "largest,smallest_abs,random", "counts": "0,8,16,24",
        "class_filter": None, "correct_only": False, "diff_class": None,
        "random_seeds": "0,1,2,3,4", "out": None,
    },
    "eval-filters": {
        "corpus": None, "params": None, "methods": "lrp,sa",
        "policies": "largest,smallest_abs,random", "counts": "0,2,4,6",
        "class_filter": None, "correct_only": False, "diff_class": None,
        "random_seeds": "0,1,2,3,4", "out": None,
    },
    "steer": {
        "corpus": None, "params": None, "actual_class": 0, "other_classes": "",
        "methods": "lrp,sa", "counts": "0,8,16,24", "kind": "columns", "out": None,
    },
    "serve": {
        "corpus": None, "params": None, "host": "127.0.0.1", "port": 8000,
        "cache_cap": None, "ui_dir": None,
    },
}


class CliError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    return [int(tok) for tok in text.split(",")]


def _str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attribkit",
        description="Train a small CNN text classifier, attribute its predictions, "
                    "and evaluate the attributions with feature-removal experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with option defaults")
        return p

    p = add("ingest", "load a CSV/JSONL corpus, encode it, write a corpus directory")
    p.add_argument("--input")
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--text-field", dest="text_field")
    p.add_argument("--label-field", dest="label_field")
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--max-size", dest="max_size", type=int)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--out")

    p = add("train", "train the CNN classifier on an ingested corpus")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--filters", type=int)
    p.add_argument("--widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--bias", dest="bias", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--epsilon-lrp", dest="epsilon_lrp", type=float)
    p.add_argument("--seed", type=int)

    p = add("attribute", "write attribution tensors and word highlights for documents")
    p.add_argument("--corpus")
    p.add_argument("--params")
    p.add_argument("--doc-ids", dest="doc_ids")
    p.add_argument("--method", choices=["lrp", "sa"])
    p.add_argument("--target-class", dest="target_class",
                   help="'true', 'pred', or a class index")
    p.add_argument("--out")

    p = add("eval-words", "weighted document embeddings + downstream classifiers")
    p.add_argument("--corpus")
    p.add_argument("--params")
    p.add_argument("--methods")
    p.add_argument("--classifiers")
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--out")

    for name, kind in (("eval-columns", "embedding column"), ("eval-filters", "pooled filter")):
        p = add(name, f"accuracy curves under {kind} removal")
        p.add_argument("--corpus")
        p.add_argument("--params")
        p.add_argument("--methods")
        p.add_argument("--policies")
        p.add_argument("--counts")
        p.add_argument("--class-filter", dest="class_filter", type=int)
        p.add_argument("--correct-only", dest="correct_only",
                       action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--diff-class", dest="diff_class", type=int)
        p.add_argument("--random-seeds", dest="random_seeds")
        p.add_argument("--out")

    p = add("steer", "misclassification counts under class-difference removal")
    p.add_argument("--corpus")
    p.add_argument("--params")
    p.add_argument("--actual-class", dest="actual_class", type=int)
    p.add_argument("--other-classes", dest="other_classes")
    p.add_argument("--methods")
    p.add_argument("--counts")
    p.add_argument("--kind", choices=["columns", "filters"])
    p.add_argument("--out")

    p = add("serve", "serve the model and corpus over HTTP for the analyst UI")
    p.add_argument("--corpus")
    p.add_argument("--params")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--cache-cap", dest="cache_cap", type=int)
    p.add_argument("--ui-dir", dest="ui_dir")

    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and explicit flags; reject unknown keys."""
    cmd = args.subcommand
    options = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_opts = json.load(fh)
        unknown = set(file_opts) - set(options)
        if unknown:
            raise CliError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        options.update(file_opts)
    for key in options:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    if "out" in options and options["out"] is None:
        options["out"] = os.environ.get(OUTDIR_ENV)
    return options


def _require(options: dict, *keys: str) -> None:
    for key in keys:
        if options.get(key) in (None, ""):
            raise CliError(f"--{key.replace('_', '-')} is required")


def _write_resolved(options: dict, cmd: str) -> Path:
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"subcommand": cmd, **options}
    with open(out / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return out


def _load_model_and_corpus(options: dict) -> tuple[mmod.ModelParams, cmod.Corpus]:
    _require(options, "corpus", "params")
    corpus = cmod.load_corpus_dir(options["corpus"])
    params = mmod.load_params(options["params"])
    if params.config.vocab_size != corpus.vocab.size:
        raise CliError(
            f"params expect vocab size {params.config.vocab_size}, corpus has {corpus.vocab.size}")
    if params.config.seq_len != corpus.seq_len:
        raise CliError(
            f"params expect seq_len {params.config.seq_len}, corpus has {corpus.seq_len}")
    return params, corpus


def cmd_ingest(options: dict) -> int:
    _require(options, "input", "out")
    corpus = cmod.load_corpus(
        options["input"], options["format"],
        text_field=options["text_field"], label_field=options["label_field"],
        train_frac=float(options["train_frac"]), seed=int(options["seed"]),
        min_count=int(options["min_count"]),
        max_size=None if options["max_size"] is None else int(options["max_size"]),
        seq_len=int(options["seq_len"]))
    out = _write_resolved(options, "ingest")
    cmod.save_corpus(corpus, out)
    print(f"ingested {len(corpus.documents)} documents "
          f"(V={corpus.vocab.size}, C={corpus.num_classes}, L={corpus.seq_len}) -> {out}")
    return 0


def cmd_train(options: dict) -> int:
    _require(options, "corpus", "out")
    corpus = cmod.load_corpus_dir(options["corpus"])
    config = mmod.ModelConfig(
        vocab_size=corpus.vocab.size,
        num_classes=corpus.num_classes,
        seq_len=corpus.seq_len,
        embed_dim=int(options["embed_dim"]),
        filter_widths=tuple(_int_list(str(options["widths"]))),
        filters_per_width=int(options["filters"]),
        use_bias=bool(options["bias"]),
        seed=int(options["seed"]),
        epsilon_lrp=float(options["epsilon_lrp"]),
        learning_rate=float(options["learning_rate"]),
        batch_size=int(options["batch_size"]),
        epochs=int(options["epochs"]),
        optimizer=options["optimizer"],
    )
    params, log = mmod.train(corpus, config)
    out = _write_resolved(options, "train")
    mmod.save_params(params, out / "params.atpr")
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    final = log[-1]
    print(f"trained {config.epochs} epochs; "
          f"val_accuracy={final['val_accuracy']} -> {out / 'params.atpr'}")
    return 0


def _resolve_target(target: str, doc: cmod.LabeledDocument, params: mmod.ModelParams) -> int:
    if target == "true":
        return doc.label
    if target == "pred":
        return mmod.predict(params, doc.token_ids)[0]
    return int(target)


def cmd_attribute(options: dict) -> int:
    _require(options, "doc_ids", "out")
    params, corpus = _load_model_and_corpus(options)
    by_id = {d.doc_id: d for d in corpus.documents}
    method = options["method"]
    out = _write_resolved(options, "attribute")
    for doc_id in _int_list(str(options["doc_ids"])):
        if doc_id not in by_id:
            raise CliError(f"unknown doc id {doc_id}")
        doc = by_id[doc_id]
        target = _resolve_target(str(options["target_class"]), doc, params)
        tensor = amod.attribute(params, doc.token_ids, target, method, doc_id=doc_id)
        amod.save_attribution(tensor, out / f"attribution_{doc_id}_{method}.bin")
        highlights = amod.word_highlights(tensor, corpus.vocab)
        with open(out / f"highlights_{doc_id}_{method}.json", "w", encoding="utf-8") as fh:
            json.dump(amod.highlights_to_json(highlights), fh, indent=2, sort_keys=True)
            fh.write("\n")
        html_page = amod.highlights_to_html(
            highlights, title=f"doc {doc_id} / class {target} / {method}")
        (out / f"highlights_{doc_id}_{method}.html").write_text(html_page, encoding="utf-8")
        print(f"doc {doc_id}: class {target}, logit {tensor.logit_value:.6g}, "
              f"{len(highlights)} tokens")
    return 0


def _eval_metadata(options: dict, params: mmod.ModelParams) -> dict:
    # only basenames here: identical runs in different directories must still
    # produce byte-identical reports (full paths live in resolved_config.json)
    return {
        "corpus": Path(options["corpus"]).name,
        "params": Path(options["params"]).name,
        "model_config": mmod._config_to_dict(params.config),
        "options": {k: v for k, v in sorted(options.items()) if k not in ("corpus", "params", "out")},
    }


def cmd_eval_words(options: dict) -> int:
    _require(options, "out")
    params, corpus = _load_model_and_corpus(options)
    methods = [None if m == "none" else m for m in _str_list(options["methods"])]
    table = emod.word_relevance_eval(
        corpus, params, methods=tuple(methods),
        classifiers=tuple(_str_list(options["classifiers"])),
        knn_k=int(options["knn_k"]))
    out = _write_resolved(options, "eval-words")
    emod.emit_report(out, word_eval=table,
                     metadata=_eval_metadata(options, params), notes=REPORT_NOTES)
    for scheme, row in table.items():
        print(scheme, {k: round(v, 4) for k, v in row.items()})
    return 0


def _removal_eval(options: dict, feature_kind: str) -> int:
    _require(options, "out")
    params, corpus = _load_model_and_corpus(options)
    docs = emod.select_docs(
        params, corpus.validation_documents,
        class_filter=options["class_filter"],
        correct_only=bool(options["correct_only"]))
    if not docs:
        raise CliError("document subset is empty after filtering")
    counts = _int_list(str(options["counts"]))
    subset_desc = "validation"
    if options["class_filter"] is not None:
        subset_desc += f" label={options['class_filter']}"
    if options["correct_only"]:
        subset_desc += " correct-only"
    curves = []
    for policy in _str_list(options["policies"]):
        if policy == emod.POLICY_RANDOM:
            curves.append(emod.removal_eval(
                params, docs, None, policy, counts, feature_kind,
                random_seeds=tuple(_int_list(str(options["random_seeds"]))),
                doc_subset=subset_desc))
            continue
        for method in _str_list(options["methods"]):
            curves.append(emod.removal_eval(
                params, docs, method, policy, counts, feature_kind,
                diff_class=options["diff_class"], doc_subset=subset_desc))
    out = _write_resolved(options, f"eval-{feature_kind}s")
    emod.emit_report(out, curves=curves,
                     metadata=_eval_metadata(options, params), notes=REPORT_NOTES)
    for c in curves:
        label = c.policy if c.diff_class is None else f"{c.policy}({c.diff_class})"
        print(f"{c.feature_kind} {label} {c.method}: "
              + " ".join(f"{m}:{a:.4f}" for m, a in zip(c.removal_counts, c.accuracy_at)))
    return 0


def cmd_eval_columns(options: dict) -> int:
    return _removal_eval(options, emod.KIND_COLUMN)


def cmd_eval_filters(options: dict) -> int:
    return _removal_eval(options, emod.KIND_FILTER)


def cmd_steer(options: dict) -> int:
    _require(options, "out")
    params, corpus = _load_model_and_corpus(options)
    actual = int(options["actual_class"])
    docs = emod.select_docs(params, corpus.validation_documents,
                            class_filter=actual, correct_only=True)
    if not docs:
        raise CliError(f"no correctly classified validation documents for class {actual}")
    metrics: list[int | None] = [None] + [int(c) for c in _int_list(str(options["other_classes"]))]
    kind = emod.KIND_COLUMN if options["kind"] == "columns" else emod.KIND_FILTER
    table = emod.steering_eval(
        params, docs, actual,
        methods=tuple(_str_list(options["methods"])),
        metrics=tuple(metrics),
        counts=_int_list(str(options["counts"])),
        feature_kind=kind)
    out = _write_resolved(options, "steer")
    emod.emit_report(out, steering=[table],
                     metadata=_eval_metadata(options, params), notes=REPORT_NOTES)
    max_m = max(table.removal_counts)
    for metric in table.metric_labels:
        for method in table.methods:
            spread = {c: table.count(c, max_m, metric, method)
                      for c in range(corpus.num_classes)}
            print(f"{metric} {method} m={max_m}: {spread}")
    return 0


def cmd_serve(options: dict) -> int:
    import uvicorn

    from .service import ServiceSettings, SessionState, create_app

    params, corpus = _load_model_and_corpus(options)
    settings = ServiceSettings(cache_cap=options["cache_cap"])
    state = SessionState(params=params, corpus=corpus, settings=settings)
    app = create_app(state, ui_dir=options["ui_dir"])
    uvicorn.run(app, host=options["host"], port=int(options["port"]), log_level="info")
    return 0


_HANDLERS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "eval-words": cmd_eval_words,
    "eval-columns": cmd_eval_columns,
    "eval-filters": cmd_eval_filters,
    "steer": cmd_steer,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        options = resolve_options(args)
        return _HANDLERS[args.subcommand](options)
    except (CliError, cmod.CorpusError, mmod.ModelError, emod.EvaluationError,
            amod.AttributionError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
