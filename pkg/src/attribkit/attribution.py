"""Per-feature attribution for the CNN classifier.

Two methods over the same index space (word position j, embedding dimension k):

* signed saliency: the raw partial derivative of the target-class logit with
  respect to each embedded input entry, no absolute value taken;
* layer-wise relevance propagation: the target-class logit is redistributed
  backwards layer by layer in proportion to each input's share of the unit
  activation it feeds, so that layer totals are preserved.

Both produce an (L, D) tensor plus word-level, column-level and filter-level
aggregates used by the removal experiments and the analyst UI.
"""

from __future__ import annotations

import html
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PAD_ID, Vocabulary
from .model import ForwardTrace, ModelParams, ShapeError, forward, gradients

ATTRIBUTION_MAGIC = b"ATAT1"
ATTRIBUTION_FORMAT_VERSION = 1

METHOD_LRP = "lrp"
METHOD_SALIENCY = "sa"


class AttributionError(Exception):
    """Inconsistent inputs to an attribution operation."""


@dataclass
class AttributionTensor:
    doc_id: int
    target_class: int
    method: str                      # "lrp" or "sa"
    R: np.ndarray                    # (L, D)
    word_scores: np.ndarray          # (L,)  row sums of R
    column_scores: np.ndarray        # (D,)  column sums of R
    filter_scores: np.ndarray        # (3F,) one score per pooled filter
    logit_value: float
    epsilon: float | None            # stabilizer used (LRP only)
    token_ids: np.ndarray            # (L,) the encoded document


@dataclass
class AttributionDiff:
    class_a: int
    class_b: int
    column_diffs: np.ndarray         # (D,)
    filter_diffs: np.ndarray         # (3F,)


def lrp_linear(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
               relevance_out: np.ndarray, epsilon: float) -> np.ndarray:
    """Redistribute output relevance of one linear layer onto its inputs.

    Input j's share of output unit k is its contribution x_j * w_jk divided by
    the unit total z_k = sum_j x_j w_jk + b_k.  The denominator carries a
    sign-matched stabilizer (z_k + eps * sign(z_k), sign(0) = +1) so the result
    is always finite; the stabilizer mass is handed back to the inputs in
    proportion to |x_j w_jk|, which keeps the layer total exact up to the share
    the bias absorbs.  Zero contributions therefore receive exactly zero
    relevance, and on bias-free layers the input total equals the output total
    to machine precision.

    x: (J,), weights: (J, K), bias: (K,), relevance_out: (K,) -> (J,).
    """
    contrib = x[:, None] * weights                         # (J, K)
    z = contrib.sum(axis=0) + bias                         # (K,)
    sign = np.where(z >= 0.0, 1.0, -1.0)
    denom = z + epsilon * sign                             # |denom| >= eps
    abs_contrib = np.abs(contrib)
    totals = abs_contrib.sum(axis=0)
    backfill = np.divide(epsilon * sign, totals,
                         out=np.zeros_like(totals), where=totals > 0.0)
    numer = contrib + abs_contrib * backfill
    return numer @ (relevance_out / denom)


def lrp(params: ModelParams, token_ids: np.ndarray, target_class: int,
        *, epsilon: float | None = None, doc_id: int = -1) -> AttributionTensor:
    """Relevance propagation from the target-class logit down to the embedding.

    Output layer relevance starts as a one-hot vector holding the logit.  The
    dense layer redistributes onto the pooled vector; each pooled entry then
    hands its entire relevance to the convolution window that won its
    max-pool (winner take all, first window on ties); ReLU passes relevance
    through unchanged; each winning window redistributes onto its embedded
    inputs with the same linear rule.  Positions outside every winning window
    end with exactly zero relevance.
    """
    cfg = params.config
    if not 0 <= target_class < cfg.num_classes:
        raise ShapeError(f"class {target_class} out of range [0, {cfg.num_classes})")
    eps = cfg.epsilon_lrp if epsilon is None else float(epsilon)
    if eps <= 0:
        raise AttributionError("epsilon must be positive")
    trace = forward(params, token_ids)
    logit = float(trace.logits[target_class])

    relevance_out = np.zeros(cfg.num_classes)
    relevance_out[target_class] = logit
    r_pooled = lrp_linear(trace.pooled, params.dense_weights, params.dense_bias,
                          relevance_out, eps)

    F, D = cfg.filters_per_width, cfg.embed_dim
    r_emb = np.zeros((cfg.seq_len, D))
    for w_idx, n in enumerate(cfg.filter_widths):
        for f in range(F):
            r_f = r_pooled[w_idx * F + f]
            if r_f == 0.0:
                continue
            t = int(trace.pool_argmax[n][f])
            window = trace.embedded[t:t + n].reshape(n * D)
            r_window = lrp_linear(window, params.conv_weights[n][f][:, None],
                                  params.conv_bias[n][f:f + 1],
                                  np.array([r_f]), eps)
            r_emb[t:t + n] += r_window.reshape(n, D)
    return AttributionTensor(
        doc_id=doc_id,
        target_class=target_class,
        method=METHOD_LRP,
        R=r_emb,
        word_scores=r_emb.sum(axis=1),
        column_scores=r_emb.sum(axis=0),
        filter_scores=r_pooled,
        logit_value=logit,
        epsilon=eps,
        token_ids=np.asarray(token_ids),
    )


def saliency(params: ModelParams, token_ids: np.ndarray, target_class: int,
             *, doc_id: int = -1) -> AttributionTensor:
    """Signed gradient of the target-class logit w.r.t. the embedded inputs.

    Filter scores are the gradient w.r.t. the pooled vector, mirroring the
    relevance-at-pooled convention used for the LRP tensor.
    """
    trace = forward(params, token_ids)
    d_emb, d_pooled = gradients(params, token_ids, target_class, trace=trace)
    return AttributionTensor(
        doc_id=doc_id,
        target_class=target_class,
        method=METHOD_SALIENCY,
        R=d_emb,
        word_scores=d_emb.sum(axis=1),
        column_scores=d_emb.sum(axis=0),
        filter_scores=d_pooled,
        logit_value=float(trace.logits[target_class]),
        epsilon=None,
        token_ids=np.asarray(token_ids),
    )


def attribute(params: ModelParams, token_ids: np.ndarray, target_class: int,
              method: str, *, epsilon: float | None = None, doc_id: int = -1) -> AttributionTensor:
    if method == METHOD_LRP:
        return lrp(params, token_ids, target_class, epsilon=epsilon, doc_id=doc_id)
    if method == METHOD_SALIENCY:
        return saliency(params, token_ids, target_class, doc_id=doc_id)
    raise AttributionError(f"unknown attribution method {method!r}")


def attribution_difference(a: AttributionTensor, b: AttributionTensor) -> AttributionDiff:
    """Per-column and per-filter score differences between two target classes."""
    if a.doc_id != b.doc_id or not np.array_equal(a.token_ids, b.token_ids):
        raise AttributionError("attribution difference requires tensors for the same document")
    if a.method != b.method:
        raise AttributionError(f"method mismatch: {a.method!r} vs {b.method!r}")
    if a.R.shape != b.R.shape or a.filter_scores.shape != b.filter_scores.shape:
        raise AttributionError("attribution tensors come from different model shapes")
    return AttributionDiff(
        class_a=a.target_class,
        class_b=b.target_class,
        column_diffs=a.column_scores - b.column_scores,
        filter_diffs=a.filter_scores - b.filter_scores,
    )


@dataclass
class ConservationRecord:
    doc_id: int
    target_class: int
    logit_value: float
    residual_pooled: float
    residual_embedded: float
    flagged: bool


def conservation_report(params: ModelParams, docs, class_policy="predicted",
                        *, epsilon: float | None = None,
                        tolerance: float = 1e-6) -> list[ConservationRecord]:
    """Check how much relevance survives propagation, per document.

    The residual |sum(R) - logit| is reported at the pooled and the embedded
    checkpoints; a document is flagged when either exceeds
    tolerance * max(1, |logit|).  With biases enabled the residual equals the
    relevance those bias terms absorbed, so flags are expected there.
    """
    records = []
    for doc in docs:
        if class_policy == "predicted":
            trace = forward(params, doc.token_ids)
            target = int(np.argmax(trace.probs))
        elif class_policy == "true":
            target = doc.label
        else:
            target = int(class_policy)
        tensor = lrp(params, doc.token_ids, target, epsilon=epsilon, doc_id=doc.doc_id)
        scale = max(1.0, abs(tensor.logit_value))
        res_pooled = abs(float(tensor.filter_scores.sum()) - tensor.logit_value)
        res_emb = abs(float(tensor.R.sum()) - tensor.logit_value)
        records.append(ConservationRecord(
            doc_id=doc.doc_id,
            target_class=target,
            logit_value=tensor.logit_value,
            residual_pooled=res_pooled,
            residual_embedded=res_emb,
            flagged=bool(res_pooled > tolerance * scale or res_emb > tolerance * scale),
        ))
    return records


@dataclass
class Highlight:
    token: str
    word_score: float
    intensity: float   # |score| / max |score| over the document, 0 if all zero
    sign: int          # -1, 0, +1


def word_highlights(tensor: AttributionTensor, vocab: Vocabulary) -> list[Highlight]:
    """Token-level view of an attribution tensor; PAD positions are omitted."""
    keep = [j for j in range(len(tensor.token_ids)) if int(tensor.token_ids[j]) != PAD_ID]
    scores = np.array([tensor.word_scores[j] for j in keep])
    peak = float(np.abs(scores).max()) if len(scores) else 0.0
    out = []
    for j, score in zip(keep, scores):
        s = float(score)
        out.append(Highlight(
            token=vocab.token_for(int(tensor.token_ids[j])),
            word_score=s,
            intensity=abs(s) / peak if peak > 0.0 else 0.0,
            sign=0 if s == 0.0 else (1 if s > 0.0 else -1),
        ))
    return out


def highlights_to_json(highlights: list[Highlight]) -> list[dict]:
    return [
        {"token": h.token, "word_score": h.word_score, "intensity": h.intensity, "sign": h.sign}
        for h in highlights
    ]


def highlights_to_html(highlights: list[Highlight], title: str = "attribution highlights") -> str:
    """Standalone HTML page: positive scores shade red, negative shade blue."""
    spans = []
    for h in highlights:
        if h.sign > 0:
            style = f"background-color: rgba(214, 39, 40, {h.intensity:.4f});"
        elif h.sign < 0:
            style = f"background-color: rgba(31, 119, 180, {h.intensity:.4f});"
        else:
            style = ""
        spans.append(
            f'<span title="{h.word_score:.6g}" style="{style}">{html.escape(h.token)}</span>'
        )
    body = " ".join(spans)
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title></head>\n"
        f"<body><p style=\"font-family: sans-serif; line-height: 1.8;\">{body}</p></body></html>\n"
    )


# ---------------------------------------------------------------------------
# Tensor file format: magic "ATAT1", u64 header length, JSON header, then raw
# little-endian float64 arrays (R, word_scores, column_scores, filter_scores).
# ---------------------------------------------------------------------------

def save_attribution(tensor: AttributionTensor, path: str | Path) -> None:
    path = Path(path)
    header = {
        "format_version": ATTRIBUTION_FORMAT_VERSION,
        "doc_id": tensor.doc_id,
        "class": tensor.target_class,
        "method": tensor.method,
        "epsilon": tensor.epsilon,
        "logit_value": tensor.logit_value,
        "shape": list(tensor.R.shape),
        "token_ids": [int(t) for t in tensor.token_ids],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ATTRIBUTION_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in (tensor.R, tensor.word_scores, tensor.column_scores, tensor.filter_scores):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_attribution(path: str | Path) -> AttributionTensor:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(ATTRIBUTION_MAGIC) + 8 or raw[: len(ATTRIBUTION_MAGIC)] != ATTRIBUTION_MAGIC:
        raise AttributionError(f"{path}: missing attribution file magic")
    offset = len(ATTRIBUTION_MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    if header.get("format_version") != ATTRIBUTION_FORMAT_VERSION:
        raise AttributionError(f"{path}: unsupported format version")
    L, D = header["shape"]
    n_filters = (len(raw) - offset) // 8 - L * D - L - D

    def take(count: int, shape) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
        return arr

    R = take(L * D, (L, D))
    word_scores = take(L, (L,))
    column_scores = take(D, (D,))
    filter_scores = take(n_filters, (n_filters,))
    return AttributionTensor(
        doc_id=header["doc_id"],
        target_class=header["class"],
        method=header["method"],
        R=R,
        word_scores=word_scores,
        column_scores=column_scores,
        filter_scores=filter_scores,
        logit_value=header["logit_value"],
        epsilon=header["epsilon"],
        token_ids=np.array(header["token_ids"], dtype=np.int32),
    )
