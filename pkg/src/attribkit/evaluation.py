"""Attribution-quality evaluation.

Three protocols over a frozen trained model:

* word level: attribution word scores reweight bag-of-embedding document
  vectors, and downstream classifiers (KNN, linear softmax) measure whether
  the weighting helps;
* column level: embedding columns are zeroed per document in attribution
  order, and model accuracy is tracked as the removal count grows;
* filter level: pooled convolution filters are zeroed the same way.

Rankings are computed once on the unperturbed model; removal is cumulative
over each document's fixed ranking.  Attribution targets the document's true
class, except for the class-difference policy which subtracts a second class.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attribution import attribute, attribution_difference
from .corpus import PAD_ID, Corpus, LabeledDocument
from .model import ModelParams, predict_batch

REPORT_SCHEMA_VERSION = 1

POLICY_LARGEST = "largest"
POLICY_SMALLEST_ABS = "smallest_abs"
POLICY_DIFF = "diff"
POLICY_RANDOM = "random"

METHOD_RANDOM = "rand"

KIND_COLUMN = "column"
KIND_FILTER = "filter"


class EvaluationError(Exception):
    """Bad inputs to an evaluation protocol."""


# ---------------------------------------------------------------------------
# Word-level protocol: weighted document embeddings + downstream classifiers
# ---------------------------------------------------------------------------

@dataclass
class WeightedDocEmbedding:
    doc_id: int
    scheme: str          # "w0", "wLRP", "wSA", "unit"
    vector: np.ndarray   # (D,)


_SCHEME_BY_METHOD = {None: "w0", "none": "w0", "lrp": "wLRP", "sa": "wSA", "unit": "unit"}


def weighted_embeddings(corpus: Corpus, params: ModelParams,
                        method: str | None = None) -> list[WeightedDocEmbedding]:
    """Per-document embedding vectors averaged over non-pad positions.

    method None/"none": plain average.  "lrp"/"sa": each word's embedding is
    scaled by its attribution word score toward the document's true class.
    "unit" is a diagnostic control with every word score forced to 1, which
    must reproduce the plain average exactly.
    """
    if method not in _SCHEME_BY_METHOD:
        raise EvaluationError(f"unknown weighting method {method!r}")
    scheme = _SCHEME_BY_METHOD[method]
    out = []
    for doc in corpus.documents:
        keep = doc.token_ids != PAD_ID
        if not keep.any():
            out.append(WeightedDocEmbedding(doc.doc_id, scheme, np.zeros(params.config.embed_dim)))
            continue
        emb = params.embedding[doc.token_ids[keep]]
        if method in (None, "none"):
            vec = emb.sum(axis=0) / keep.sum()
        elif method == "unit":
            weights = np.ones(int(keep.sum()))
            vec = (weights[:, None] * emb).sum(axis=0) / keep.sum()
        else:
            tensor = attribute(params, doc.token_ids, doc.label, method, doc_id=doc.doc_id)
            weights = tensor.word_scores[keep]
            vec = (weights[:, None] * emb).sum(axis=0) / keep.sum()
        out.append(WeightedDocEmbedding(doc.doc_id, scheme, vec))
    return out


def knn_predict(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray,
                k: int, num_classes: int) -> np.ndarray:
    """Euclidean k-nearest-neighbour vote; vote ties go to the lowest class."""
    if k > len(train_x):
        raise EvaluationError(f"k={k} exceeds the {len(train_x)} training points")
    d2 = (test_x ** 2).sum(axis=1)[:, None] + (train_x ** 2).sum(axis=1)[None, :] \
        - 2.0 * test_x @ train_x.T
    neighbours = np.argsort(d2, kind="stable", axis=1)[:, :k]
    return np.array([np.bincount(train_y[row], minlength=num_classes).argmax()
                     for row in neighbours])


def linear_softmax_fit(train_x: np.ndarray, train_y: np.ndarray, num_classes: int,
                       *, learning_rate: float = 0.5, iterations: int = 300,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent on multinomial cross-entropy, zero init."""
    n, d = train_x.shape
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), train_y] = 1.0
    for _ in range(iterations):
        logits = train_x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        g = (probs - onehot) / n
        w -= learning_rate * (train_x.T @ g)
        b -= learning_rate * g.sum(axis=0)
    return w, b


def downstream_classify(embeddings: list[WeightedDocEmbedding], labels: dict[int, int],
                        train_ids: list[int], test_ids: list[int], classifier: str,
                        *, num_classes: int, k: int = 5) -> float:
    """Accuracy of a downstream classifier on held-out document embeddings."""
    by_id = {e.doc_id: e.vector for e in embeddings}
    train_x = np.stack([by_id[i] for i in train_ids])
    train_y = np.array([labels[i] for i in train_ids])
    test_x = np.stack([by_id[i] for i in test_ids])
    test_y = np.array([labels[i] for i in test_ids])
    if len(set(train_y.tolist())) < 2:
        raise EvaluationError("downstream training split must contain at least two classes")
    if classifier == "knn":
        preds = knn_predict(train_x, train_y, test_x, k=k, num_classes=num_classes)
    elif classifier == "linear":
        w, b = linear_softmax_fit(train_x, train_y, num_classes)
        preds = (test_x @ w + b).argmax(axis=1)
    else:
        raise EvaluationError(f"unknown downstream classifier {classifier!r}")
    return float((preds == test_y).mean())


def word_relevance_eval(corpus: Corpus, params: ModelParams,
                        methods: tuple[str | None, ...] = (None, "lrp", "sa"),
                        classifiers: tuple[str, ...] = ("knn", "linear"),
                        *, knn_k: int = 5) -> dict:
    """Downstream accuracy per (weighting scheme, classifier); table-shaped."""
    train_ids = list(corpus.splits["train"])
    test_ids = list(corpus.splits["validation"])
    labels = {d.doc_id: d.label for d in corpus.documents}
    table: dict[str, dict[str, float]] = {}
    for method in methods:
        embs = weighted_embeddings(corpus, params, method)
        scheme = _SCHEME_BY_METHOD[method]
        table[scheme] = {}
        for clf in classifiers:
            table[scheme][clf] = downstream_classify(
                embs, labels, train_ids, test_ids, clf,
                num_classes=corpus.num_classes, k=knn_k)
    return table


# ---------------------------------------------------------------------------
# Feature ranking
# ---------------------------------------------------------------------------

def rank_features(scores: np.ndarray, policy: str) -> np.ndarray:
    """Feature indices in removal order; ties resolved to the lower index."""
    scores = np.asarray(scores, dtype=float)
    if not np.isfinite(scores).all():
        raise EvaluationError("feature scores must be finite")
    if policy == POLICY_LARGEST:
        return np.argsort(-scores, kind="stable")
    if policy == POLICY_SMALLEST_ABS:
        return np.argsort(np.abs(scores), kind="stable")
    raise EvaluationError(f"unknown ranking policy {policy!r}")


# ---------------------------------------------------------------------------
# Column / filter removal protocol
# ---------------------------------------------------------------------------

@dataclass
class PerturbationCurve:
    feature_kind: str                 # "column" | "filter"
    policy: str                       # "largest" | "smallest_abs" | "diff" | "random"
    method: str                       # "lrp" | "sa" | "rand"
    removal_counts: list[int]
    accuracy_at: list[float]
    doc_subset: str
    seeds: list[int] = field(default_factory=list)
    diff_class: int | None = None
    per_seed_accuracy: list[list[float]] | None = None

    def to_dict(self) -> dict:
        d = {
            "feature_kind": self.feature_kind,
            "policy": self.policy,
            "method": self.method,
            "removal_counts": self.removal_counts,
            "accuracy_at": self.accuracy_at,
            "doc_subset": self.doc_subset,
            "seeds": self.seeds,
        }
        if self.diff_class is not None:
            d["diff_class"] = self.diff_class
        if self.per_seed_accuracy is not None:
            d["per_seed_accuracy"] = self.per_seed_accuracy
        return d


def _feature_count(params: ModelParams, feature_kind: str) -> int:
    if feature_kind == KIND_COLUMN:
        return params.config.embed_dim
    if feature_kind == KIND_FILTER:
        return params.config.pooled_size
    raise EvaluationError(f"unknown feature kind {feature_kind!r}")


def _attribution_rankings(params: ModelParams, docs: list[LabeledDocument],
                          method: str, policy: str, feature_kind: str,
                          diff_class: int | None) -> list[np.ndarray]:
    rankings = []
    for doc in docs:
        base = attribute(params, doc.token_ids, doc.label, method, doc_id=doc.doc_id)
        if policy == POLICY_DIFF:
            if diff_class is None:
                raise EvaluationError("diff policy needs the comparison class")
            other = attribute(params, doc.token_ids, diff_class, method, doc_id=doc.doc_id)
            diff = attribution_difference(base, other)
            scores = diff.column_diffs if feature_kind == KIND_COLUMN else diff.filter_diffs
            rankings.append(rank_features(scores, POLICY_LARGEST))
        else:
            scores = base.column_scores if feature_kind == KIND_COLUMN else base.filter_scores
            rankings.append(rank_features(scores, policy))
    return rankings


def _accuracies_for_rankings(params: ModelParams, docs: list[LabeledDocument],
                             rankings: list[np.ndarray], counts: list[int],
                             feature_kind: str) -> list[float]:
    ids = np.stack([d.token_ids for d in docs])
    y = np.array([d.label for d in docs])
    n_feat = _feature_count(params, feature_kind)
    accs = []
    for m in counts:
        mask = np.ones((len(docs), n_feat))
        for i, order in enumerate(rankings):
            mask[i, order[:m]] = 0.0
        if feature_kind == KIND_COLUMN:
            preds, _ = predict_batch(params, ids, column_mask=mask)
        else:
            preds, _ = predict_batch(params, ids, filter_mask=mask)
        accs.append(float((preds == y).mean()))
    return accs


def _validate_counts(counts: list[int], n_feat: int, feature_kind: str) -> list[int]:
    counts = [int(m) for m in counts]
    for m in counts:
        if m < 0 or m > n_feat:
            raise EvaluationError(
                f"removal count {m} out of range for {n_feat} {feature_kind} features")
    return counts


def removal_eval(params: ModelParams, docs: list[LabeledDocument], method: str | None,
                 policy: str, counts: list[int], feature_kind: str,
                 *, diff_class: int | None = None,
                 random_seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
                 doc_subset: str = "") -> PerturbationCurve:
    """Accuracy-vs-removal curve for one (method, policy) combination.

    Deterministic policies rank per document once on the unperturbed model.
    The random policy draws one feature permutation per (seed, document) and
    reports the mean curve over the seeds, keeping each seed's curve alongside.
    """
    if not docs:
        raise EvaluationError("document subset is empty")
    n_feat = _feature_count(params, feature_kind)
    counts = _validate_counts(counts, n_feat, feature_kind)
    if policy == POLICY_RANDOM:
        per_seed = []
        for seed in random_seeds:
            rng = np.random.default_rng(seed)
            rankings = [rng.permutation(n_feat) for _ in docs]
            per_seed.append(_accuracies_for_rankings(params, docs, rankings, counts, feature_kind))
        mean = np.mean(per_seed, axis=0).tolist()
        return PerturbationCurve(feature_kind, policy, METHOD_RANDOM, counts, mean,
                                 doc_subset, seeds=list(random_seeds),
                                 per_seed_accuracy=per_seed)
    if method is None:
        raise EvaluationError("an attribution method is required for non-random policies")
    rankings = _attribution_rankings(params, docs, method, policy, feature_kind, diff_class)
    accs = _accuracies_for_rankings(params, docs, rankings, counts, feature_kind)
    return PerturbationCurve(feature_kind, policy, method, counts, accs, doc_subset,
                             diff_class=diff_class if policy == POLICY_DIFF else None)


def column_removal_eval(params: ModelParams, docs: list[LabeledDocument],
                        method: str | None, policy: str, counts: list[int],
                        diff_class: int | None = None, **kw) -> PerturbationCurve:
    return removal_eval(params, docs, method, policy, counts, KIND_COLUMN,
                        diff_class=diff_class, **kw)


def filter_removal_eval(params: ModelParams, docs: list[LabeledDocument],
                        method: str | None, policy: str, counts: list[int],
                        diff_class: int | None = None, **kw) -> PerturbationCurve:
    return removal_eval(params, docs, method, policy, counts, KIND_FILTER,
                        diff_class=diff_class, **kw)


def select_docs(params: ModelParams, docs: list[LabeledDocument],
                *, class_filter: int | None = None,
                correct_only: bool = False) -> list[LabeledDocument]:
    """Restrict an evaluation subset by label and/or initial correctness."""
    subset = [d for d in docs if class_filter is None or d.label == class_filter]
    if correct_only and subset:
        ids = np.stack([d.token_ids for d in subset])
        preds, _ = predict_batch(params, ids)
        subset = [d for d, p in zip(subset, preds) if int(p) == d.label]
    return subset


# ---------------------------------------------------------------------------
# Class steering protocol
# ---------------------------------------------------------------------------

@dataclass
class MisclassificationTable:
    actual_class: int
    feature_kind: str
    removal_counts: list[int]
    methods: list[str]
    metric_labels: list[str]
    subset_size: int
    counts: dict[tuple[int, int, str, str], int]  # (pred_class, m, metric, method)

    def count(self, pred_class: int, m: int, metric: str, method: str) -> int:
        return self.counts.get((pred_class, m, metric, method), 0)

    def to_rows(self) -> list[dict]:
        rows = []
        for (pred, m, metric, method), n in sorted(self.counts.items(),
                                                   key=lambda kv: (kv[0][2], kv[0][3], kv[0][1], kv[0][0])):
            rows.append({"predicted_class": pred, "removal_count": m,
                         "metric": metric, "method": method, "count": n})
        return rows


def metric_label(actual_class: int, other: int | None) -> str:
    if other is None:
        return f"attr_{actual_class}"
    return f"attr_{actual_class}-attr_{other}"


def steering_eval(params: ModelParams, docs: list[LabeledDocument], actual_class: int,
                  methods: tuple[str, ...], metrics: tuple[int | None, ...],
                  counts: list[int], feature_kind: str = KIND_COLUMN) -> MisclassificationTable:
    """Prediction counts after removal under plain and class-difference metrics.

    `docs` must all be correctly classified as `actual_class` on the
    unperturbed model; each metric is either None (rank by attribution toward
    the actual class) or another class index c' (rank by the attribution
    difference toward c', whose removal is expected to pull predictions there).
    """
    if not docs:
        raise EvaluationError("steering requires a non-empty document subset")
    if any(d.label != actual_class for d in docs):
        raise EvaluationError("steering subset must have the actual class as label")
    ids = np.stack([d.token_ids for d in docs])
    preds, _ = predict_batch(params, ids)
    if any(int(p) != actual_class for p in preds):
        raise EvaluationError("steering subset must be correctly classified before removal")
    n_feat = _feature_count(params, feature_kind)
    counts = _validate_counts(counts, n_feat, feature_kind)
    table: dict[tuple[int, int, str, str], int] = {}
    labels = [metric_label(actual_class, other) for other in metrics]
    num_classes = params.config.num_classes
    for other, label in zip(metrics, labels):
        policy = POLICY_DIFF if other is not None else POLICY_LARGEST
        for method in methods:
            rankings = _attribution_rankings(params, docs, method, policy,
                                             feature_kind, other)
            for m in counts:
                mask = np.ones((len(docs), n_feat))
                for i, order in enumerate(rankings):
                    mask[i, order[:m]] = 0.0
                if feature_kind == KIND_COLUMN:
                    p, _ = predict_batch(params, ids, column_mask=mask)
                else:
                    p, _ = predict_batch(params, ids, filter_mask=mask)
                tally = np.bincount(p, minlength=num_classes)
                for cls in range(num_classes):
                    table[(cls, m, label, method)] = int(tally[cls])
    return MisclassificationTable(
        actual_class=actual_class,
        feature_kind=feature_kind,
        removal_counts=counts,
        methods=list(methods),
        metric_labels=labels,
        subset_size=len(docs),
        counts=table,
    )


# ---------------------------------------------------------------------------
# Report bundle
# ---------------------------------------------------------------------------

def _curve_filename(curve: PerturbationCurve) -> str:
    policy = curve.policy
    if curve.policy == POLICY_DIFF and curve.diff_class is not None:
        policy = f"diff{curve.diff_class}"
    return f"curve_{curve.feature_kind}_{policy}_{curve.method}.csv"


def emit_report(out_dir: str | Path, *, curves: list[PerturbationCurve] = (),
                steering: list[MisclassificationTable] = (),
                word_eval: dict | None = None,
                metadata: dict | None = None,
                notes: list[str] = ()) -> Path:
    """Write `report.json` plus one CSV per curve and steering metric.

    Output is deterministic: keys are sorted and no timestamps are recorded,
    so identical runs produce byte-identical bundles.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "metadata": metadata or {},
        "notes": list(notes),
        "curves": [c.to_dict() for c in curves],
        "steering": [
            {
                "actual_class": t.actual_class,
                "feature_kind": t.feature_kind,
                "removal_counts": t.removal_counts,
                "methods": t.methods,
                "metrics": t.metric_labels,
                "subset_size": t.subset_size,
                "rows": t.to_rows(),
            }
            for t in steering
        ],
        "word_eval": word_eval or {},
    }
    report_path = out_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    for curve in curves:
        with open(out_dir / _curve_filename(curve), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if curve.per_seed_accuracy is not None:
                writer.writerow(["removal_count", "accuracy", "seed"])
                for seed, accs in zip(curve.seeds, curve.per_seed_accuracy):
                    for m, a in zip(curve.removal_counts, accs):
                        writer.writerow([m, repr(a), seed])
            else:
                writer.writerow(["removal_count", "accuracy"])
                for m, a in zip(curve.removal_counts, curve.accuracy_at):
                    writer.writerow([m, repr(a)])

    for tbl in steering:
        for metric in tbl.metric_labels:
            fname = f"steering_{tbl.actual_class}_{metric}.csv"
            with open(out_dir / fname, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["predicted_class", "removal_count", "method", "count"])
                for row in tbl.to_rows():
                    if row["metric"] != metric:
                        continue
                    writer.writerow([row["predicted_class"], row["removal_count"],
                                     row["method"], row["count"]])
    return report_path


def load_report(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
