"""Word-level CNN classifier: embedding -> parallel conv blocks (widths 3/4/5)
-> ReLU -> max-pool over time -> concatenate -> dense softmax.

Everything runs on float64 numpy so that forward passes, training and the
hand-rolled reverse-mode gradients stay reproducible bit for bit for a seed.
The forward pass caches each intermediate (including max-pool argmax windows)
because the attribution code consumes them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus

PARAMS_MAGIC = b"ATPR1"
PARAMS_FORMAT_VERSION = 1


class ModelError(Exception):
    """Base class for model failures."""


class ShapeError(ModelError):
    """Tensor shape inconsistent with the model configuration."""


class TrainingDivergedError(ModelError):
    """Loss became non-finite during training."""


class CorruptParamsError(ModelError):
    """Parameter file is truncated or fails structural checks."""


class VersionMismatchError(ModelError):
    """Parameter file was written by an incompatible format version."""


@dataclass
class ModelConfig:
    vocab_size: int
    num_classes: int
    seq_len: int = 64
    embed_dim: int = 32
    filter_widths: tuple[int, ...] = (3, 4, 5)
    filters_per_width: int = 32
    use_bias: bool = True
    seed: int = 0
    epsilon_lrp: float = 0.01
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 5
    optimizer: str = "sgd"

    def __post_init__(self) -> None:
        self.filter_widths = tuple(sorted(set(int(n) for n in self.filter_widths)))
        if not self.filter_widths:
            raise ShapeError("at least one filter width is required")
        if any(n < 1 or n > self.seq_len for n in self.filter_widths):
            raise ShapeError(f"filter widths {self.filter_widths} must lie in [1, seq_len={self.seq_len}]")
        if self.filters_per_width < 1 or self.embed_dim < 1:
            raise ShapeError("filters_per_width and embed_dim must be >= 1")
        if self.epsilon_lrp <= 0:
            raise ShapeError("epsilon_lrp must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ModelError(f"unknown optimizer {self.optimizer!r}")

    @property
    def pooled_size(self) -> int:
        return len(self.filter_widths) * self.filters_per_width


@dataclass
class ModelParams:
    config: ModelConfig
    embedding: np.ndarray                 # (V, D)
    conv_weights: dict[int, np.ndarray]   # width -> (F, n*D)
    conv_bias: dict[int, np.ndarray]      # width -> (F,)
    dense_weights: np.ndarray             # (3F, C)
    dense_bias: np.ndarray                # (C,)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """Parameter tensors in the declared serialization order."""
        out = [("embedding", self.embedding)]
        for n in self.config.filter_widths:
            out.append((f"conv_weights_{n}", self.conv_weights[n]))
            out.append((f"conv_bias_{n}", self.conv_bias[n]))
        out.append(("dense_weights", self.dense_weights))
        out.append(("dense_bias", self.dense_bias))
        return out


@dataclass
class ForwardTrace:
    embedded: np.ndarray                  # (L, D), after any column zeroing
    conv_pre: dict[int, np.ndarray]       # width -> (L-n+1, F)
    conv_post: dict[int, np.ndarray]      # width -> (L-n+1, F)
    pool_argmax: dict[int, np.ndarray]    # width -> (F,) winning window index
    pooled: np.ndarray                    # (3F,), after any filter zeroing
    logits: np.ndarray                    # (C,)
    probs: np.ndarray                     # (C,)


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded uniform[-0.05, 0.05] weights; biases start at zero."""
    rng = np.random.default_rng(config.seed)
    scale = 0.05
    emb = rng.uniform(-scale, scale, size=(config.vocab_size, config.embed_dim))
    conv_w = {
        n: rng.uniform(-scale, scale, size=(config.filters_per_width, n * config.embed_dim))
        for n in config.filter_widths
    }
    conv_b = {n: np.zeros(config.filters_per_width) for n in config.filter_widths}
    dense_w = rng.uniform(-scale, scale, size=(config.pooled_size, config.num_classes))
    dense_b = np.zeros(config.num_classes)
    return ModelParams(config, emb, conv_w, conv_b, dense_w, dense_b)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_token_ids(config: ModelConfig, token_ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(token_ids)
    if ids.ndim != 1 or ids.shape[0] != config.seq_len:
        raise ShapeError(f"token_ids must have length {config.seq_len}, got shape {ids.shape}")
    if ids.size and (int(ids.min()) < 0 or int(ids.max()) >= config.vocab_size):
        raise ShapeError("token id out of vocabulary range")
    return ids


def _forward_embedded(params: ModelParams, emb: np.ndarray,
                      zero_filters: Iterable[int] | None = None) -> ForwardTrace:
    """Run the network from an explicit (L, D) embedded matrix."""
    cfg = params.config
    F = cfg.filters_per_width
    conv_pre: dict[int, np.ndarray] = {}
    conv_post: dict[int, np.ndarray] = {}
    pool_argmax: dict[int, np.ndarray] = {}
    pooled_parts = []
    for n in cfg.filter_widths:
        t_count = cfg.seq_len - n + 1
        win = np.concatenate([emb[i:i + t_count] for i in range(n)], axis=1)  # (T, n*D)
        pre = win @ params.conv_weights[n].T + params.conv_bias[n]            # (T, F)
        post = np.maximum(pre, 0.0)
        am = post.argmax(axis=0)                                              # first max wins ties
        conv_pre[n], conv_post[n], pool_argmax[n] = pre, post, am
        pooled_parts.append(post[am, np.arange(F)])
    pooled = np.concatenate(pooled_parts)
    if zero_filters:
        idx = np.asarray(sorted(set(int(f) for f in zero_filters)))
        if idx.size and (idx.min() < 0 or idx.max() >= cfg.pooled_size):
            raise ShapeError(f"filter index out of range [0, {cfg.pooled_size})")
        pooled = pooled.copy()
        pooled[idx] = 0.0
    logits = pooled @ params.dense_weights + params.dense_bias
    return ForwardTrace(emb, conv_pre, conv_post, pool_argmax, pooled, logits, softmax(logits))


def forward(params: ModelParams, token_ids: np.ndarray,
            zero_columns: Iterable[int] | None = None,
            zero_filters: Iterable[int] | None = None) -> ForwardTrace:
    """Full traced forward pass for one encoded document.

    `zero_columns` zeroes embedding columns before the convolutions;
    `zero_filters` zeroes pooled entries before the dense layer.
    """
    cfg = params.config
    ids = _check_token_ids(cfg, token_ids)
    emb = params.embedding[ids].copy()
    if zero_columns:
        idx = np.asarray(sorted(set(int(k) for k in zero_columns)))
        if idx.size and (idx.min() < 0 or idx.max() >= cfg.embed_dim):
            raise ShapeError(f"column index out of range [0, {cfg.embed_dim})")
        emb[:, idx] = 0.0
    return _forward_embedded(params, emb, zero_filters=zero_filters)


def predict(params: ModelParams, token_ids: np.ndarray) -> tuple[int, np.ndarray]:
    """Argmax class and softmax probabilities; ties go to the lowest index."""
    trace = forward(params, token_ids)
    return int(np.argmax(trace.probs)), trace.probs


def gradients(params: ModelParams, token_ids: np.ndarray, target_class: int,
              trace: ForwardTrace | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode derivatives of logits[target_class].

    Returns (d_embedded, d_pooled): the gradient with respect to the (L, D)
    embedded matrix and to the pooled vector.  Max-pool routes gradient to the
    winning window only; ReLU passes gradient only where conv_pre > 0.
    """
    cfg = params.config
    if not 0 <= target_class < cfg.num_classes:
        raise ShapeError(f"class {target_class} out of range [0, {cfg.num_classes})")
    if trace is None:
        trace = forward(params, token_ids)
    F = cfg.filters_per_width
    d_pooled = params.dense_weights[:, target_class].copy()
    d_emb = np.zeros_like(trace.embedded)
    for w_idx, n in enumerate(cfg.filter_widths):
        t_count = cfg.seq_len - n + 1
        seg = d_pooled[w_idx * F:(w_idx + 1) * F]
        d_post = np.zeros((t_count, F))
        am = trace.pool_argmax[n]
        d_post[am, np.arange(F)] = seg
        d_pre = d_post * (trace.conv_pre[n] > 0.0)
        d_win = d_pre @ params.conv_weights[n]                                # (T, n*D)
        D = cfg.embed_dim
        for i in range(n):
            d_emb[i:i + t_count] += d_win[:, i * D:(i + 1) * D]
    return d_emb, d_pooled


# ---------------------------------------------------------------------------
# Batched paths (training and bulk evaluation)
# ---------------------------------------------------------------------------

def _batch_windows(emb: np.ndarray, n: int) -> np.ndarray:
    t_count = emb.shape[1] - n + 1
    return np.concatenate([emb[:, i:i + t_count, :] for i in range(n)], axis=2)


def _batch_forward(params: ModelParams, ids: np.ndarray,
                   column_mask: np.ndarray | None = None,
                   filter_mask: np.ndarray | None = None):
    """Forward a (B, L) id batch; masks multiply embedded columns / pooled entries.

    Returns (logits, probs, cache) where cache holds what backprop needs.
    """
    cfg = params.config
    F = cfg.filters_per_width
    emb = params.embedding[ids]                                               # (B, L, D)
    if column_mask is not None:
        emb = emb * column_mask[:, None, :]
    cache = {"ids": ids, "emb": emb, "win": {}, "pre": {}, "am": {}}
    pooled_parts = []
    for n in cfg.filter_widths:
        win = _batch_windows(emb, n)                                          # (B, T, n*D)
        pre = win @ params.conv_weights[n].T + params.conv_bias[n]            # (B, T, F)
        post = np.maximum(pre, 0.0)
        am = post.argmax(axis=1)                                              # (B, F)
        pooled_n = np.take_along_axis(post, am[:, None, :], axis=1)[:, 0, :]
        cache["win"][n], cache["pre"][n], cache["am"][n] = win, pre, am
        pooled_parts.append(pooled_n)
    pooled = np.concatenate(pooled_parts, axis=1)                             # (B, 3F)
    if filter_mask is not None:
        pooled = pooled * filter_mask
    cache["pooled"] = pooled
    logits = pooled @ params.dense_weights + params.dense_bias
    return logits, softmax(logits), cache


def predict_batch(params: ModelParams, ids: np.ndarray,
                  column_mask: np.ndarray | None = None,
                  filter_mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predictions with optional per-document removal masks."""
    logits, probs, _ = _batch_forward(params, ids, column_mask, filter_mask)
    return logits.argmax(axis=1), probs


def _batch_backward(params: ModelParams, cache: dict, d_logits: np.ndarray) -> dict:
    cfg = params.config
    F, D = cfg.filters_per_width, cfg.embed_dim
    grads: dict = {}
    grads["dense_weights"] = cache["pooled"].reshape(-1, cfg.pooled_size).T @ d_logits
    grads["dense_bias"] = d_logits.sum(axis=0)
    d_pooled = d_logits @ params.dense_weights.T                              # (B, 3F)
    d_emb = np.zeros_like(cache["emb"])
    grads["conv_weights"], grads["conv_bias"] = {}, {}
    for w_idx, n in enumerate(cfg.filter_widths):
        seg = d_pooled[:, w_idx * F:(w_idx + 1) * F]                          # (B, F)
        pre, am, win = cache["pre"][n], cache["am"][n], cache["win"][n]
        d_post = np.zeros_like(pre)
        np.put_along_axis(d_post, am[:, None, :], seg[:, None, :], axis=1)
        d_pre = d_post * (pre > 0.0)
        grads["conv_weights"][n] = np.einsum("btf,btd->fd", d_pre, win)
        grads["conv_bias"][n] = d_pre.sum(axis=(0, 1))
        d_win = d_pre @ params.conv_weights[n]                                # (B, T, n*D)
        t_count = cfg.seq_len - n + 1
        for i in range(n):
            d_emb[:, i:i + t_count, :] += d_win[:, :, i * D:(i + 1) * D]
    d_table = np.zeros_like(params.embedding)
    np.add.at(d_table, cache["ids"].ravel(), d_emb.reshape(-1, D))
    grads["embedding"] = d_table
    return grads


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return log_z - shifted[np.arange(len(labels)), labels]


def evaluate(params: ModelParams, ids: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over an encoded id matrix."""
    logits, _, _ = _batch_forward(params, ids)
    loss = float(_cross_entropy(logits, labels).mean())
    acc = float((logits.argmax(axis=1) == labels).mean())
    return loss, acc


class _Adam:
    def __init__(self, lr: float):
        self.lr, self.b1, self.b2, self.eps = lr, 0.9, 0.999, 1e-8
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        m = self.m.setdefault(name, np.zeros_like(param))
        v = self.v.setdefault(name, np.zeros_like(param))
        m *= self.b1
        m += (1 - self.b1) * grad
        v *= self.b2
        v += (1 - self.b2) * grad * grad
        mh = m / (1 - self.b1 ** self.t)
        vh = v / (1 - self.b2 ** self.t)
        param -= self.lr * mh / (np.sqrt(vh) + self.eps)


def train(corpus: Corpus, config: ModelConfig) -> tuple[ModelParams, list[dict]]:
    """Minibatch gradient descent on cross-entropy; deterministic for a seed.

    Returns the trained parameters and a per-epoch log with fields
    epoch, loss, accuracy, val_loss, val_accuracy.
    """
    if corpus.num_classes != config.num_classes:
        raise ShapeError(
            f"corpus has {corpus.num_classes} classes, config expects {config.num_classes}")
    train_docs = corpus.train_documents
    val_docs = corpus.validation_documents
    if not train_docs:
        raise ModelError("train split is empty")
    x_train = np.stack([d.token_ids for d in train_docs])
    y_train = np.array([d.label for d in train_docs])
    x_val = np.stack([d.token_ids for d in val_docs]) if val_docs else None
    y_val = np.array([d.label for d in val_docs]) if val_docs else None

    params = init_params(config)
    rng = np.random.default_rng(config.seed + 1)
    adam = _Adam(config.learning_rate) if config.optimizer == "adam" else None
    log: list[dict] = []
    n = len(train_docs)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for b_start in range(0, n, config.batch_size):
            batch = order[b_start:b_start + config.batch_size]
            ids, labels = x_train[batch], y_train[batch]
            logits, probs, cache = _batch_forward(params, ids)
            losses = _cross_entropy(logits, labels)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b_start // config.batch_size}")
            loss_sum += float(losses.sum())
            correct += int((logits.argmax(axis=1) == labels).sum())
            d_logits = probs.copy()
            d_logits[np.arange(len(labels)), labels] -= 1.0
            d_logits /= len(labels)
            grads = _batch_backward(params, cache, d_logits)
            _apply_update(params, grads, config, adam)
        entry = {"epoch": epoch, "loss": loss_sum / n, "accuracy": correct / n}
        if x_val is not None and len(x_val):
            val_loss, val_acc = evaluate(params, x_val, y_val)
            entry["val_loss"], entry["val_accuracy"] = val_loss, val_acc
        else:
            entry["val_loss"], entry["val_accuracy"] = None, None
        log.append(entry)
    return params, log


def _apply_update(params: ModelParams, grads: dict, config: ModelConfig, adam: _Adam | None) -> None:
    updates: list[tuple[str, np.ndarray, np.ndarray]] = [
        ("embedding", params.embedding, grads["embedding"]),
        ("dense_weights", params.dense_weights, grads["dense_weights"]),
    ]
    for n in config.filter_widths:
        updates.append((f"conv_weights_{n}", params.conv_weights[n], grads["conv_weights"][n]))
    if config.use_bias:
        updates.append(("dense_bias", params.dense_bias, grads["dense_bias"]))
        for n in config.filter_widths:
            updates.append((f"conv_bias_{n}", params.conv_bias[n], grads["conv_bias"][n]))
    if adam is not None:
        adam.t += 1
        for name, p, g in updates:
            adam.step(name, p, g)
    else:
        for _, p, g in updates:
            p -= config.learning_rate * g


# ---------------------------------------------------------------------------
# Parameter file format: magic "ATPR1", u64 header length, JSON header,
# then raw little-endian float64 tensors in the declared order.
# ---------------------------------------------------------------------------

def save_params(params: ModelParams, path: str | Path) -> None:
    path = Path(path)
    header = {
        "format_version": PARAMS_FORMAT_VERSION,
        "config": _config_to_dict(params.config),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in params.tensors()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in params.tensors():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["filter_widths"] = list(config.filter_widths)
    return d


def load_params(path: str | Path, expected_config: ModelConfig | None = None) -> ModelParams:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(PARAMS_MAGIC) + 8 or raw[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise CorruptParamsError(f"{path}: missing parameter file magic")
    offset = len(PARAMS_MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    if len(raw) < offset + header_len:
        raise CorruptParamsError(f"{path}: truncated header")
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptParamsError(f"{path}: unreadable header: {exc}") from exc
    offset += header_len
    version = header.get("format_version")
    if version != PARAMS_FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version!r}, this build reads {PARAMS_FORMAT_VERSION}")
    cfg_dict = dict(header["config"])
    cfg_dict["filter_widths"] = tuple(cfg_dict["filter_widths"])
    config = ModelConfig(**cfg_dict)
    arrays: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(raw) < offset + nbytes:
            raise CorruptParamsError(f"{path}: truncated tensor {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CorruptParamsError(f"{path}: {len(raw) - offset} trailing bytes")
    params = _assemble_params(config, arrays, path)
    if expected_config is not None:
        _check_against_expected(params.config, expected_config)
    return params


def _assemble_params(config: ModelConfig, arrays: dict[str, np.ndarray], path: Path) -> ModelParams:
    expected_shapes: dict[str, tuple[int, ...]] = {
        "embedding": (config.vocab_size, config.embed_dim),
        "dense_weights": (config.pooled_size, config.num_classes),
        "dense_bias": (config.num_classes,),
    }
    for n in config.filter_widths:
        expected_shapes[f"conv_weights_{n}"] = (config.filters_per_width, n * config.embed_dim)
        expected_shapes[f"conv_bias_{n}"] = (config.filters_per_width,)
    for name, shape in expected_shapes.items():
        if name not in arrays:
            raise CorruptParamsError(f"{path}: tensor {name!r} missing")
        if arrays[name].shape != shape:
            raise ShapeError(f"{path}: tensor {name!r} has shape {arrays[name].shape}, expected {shape}")
        if not np.isfinite(arrays[name]).all():
            raise CorruptParamsError(f"{path}: tensor {name!r} contains non-finite values")
    return ModelParams(
        config=config,
        embedding=arrays["embedding"],
        conv_weights={n: arrays[f"conv_weights_{n}"] for n in config.filter_widths},
        conv_bias={n: arrays[f"conv_bias_{n}"] for n in config.filter_widths},
        dense_weights=arrays["dense_weights"],
        dense_bias=arrays["dense_bias"],
    )


def _check_against_expected(actual: ModelConfig, expected: ModelConfig) -> None:
    for fld in ("vocab_size", "embed_dim", "filter_widths", "filters_per_width",
                "num_classes", "seq_len"):
        a, e = getattr(actual, fld), getattr(expected, fld)
        if a != e:
            raise ShapeError(f"loaded params have {fld}={a}, expected {e}")
