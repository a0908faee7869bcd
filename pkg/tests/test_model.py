import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attribkit.model import (
    CorruptParamsError,
    ModelConfig,
    ShapeError,
    TrainingDivergedError,
    VersionMismatchError,
    evaluate,
    forward,
    gradients,
    init_params,
    load_params,
    predict,
    predict_batch,
    save_params,
    train,
)

from conftest import random_doc, tiny_params


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def straight_line_logits(params, token_ids):
    """Independent loop-based recomputation of the forward pass."""
    cfg = params.config
    emb = np.array([params.embedding[i] for i in token_ids])
    pooled = []
    for n in cfg.filter_widths:
        for f in range(cfg.filters_per_width):
            best = None
            for t in range(cfg.seq_len - n + 1):
                acc = params.conv_bias[n][f]
                for i in range(n):
                    for k in range(cfg.embed_dim):
                        acc += emb[t + i][k] * params.conv_weights[n][f][i * cfg.embed_dim + k]
                acc = max(acc, 0.0)
                if best is None or acc > best:
                    best = acc
            pooled.append(best)
    logits = []
    for c in range(cfg.num_classes):
        z = params.dense_bias[c]
        for j, p in enumerate(pooled):
            z += p * params.dense_weights[j][c]
        logits.append(z)
    return np.array(logits)


def test_forward_deterministic():
    params = tiny_params(0)
    ids = random_doc(0, params)
    a = forward(params, ids)
    b = forward(params, ids)
    assert np.array_equal(a.logits, b.logits)
    assert np.array_equal(a.pooled, b.pooled)


def test_forward_matches_straight_line_oracle():
    for seed in range(5):
        params = tiny_params(seed, vocab_size=10, embed_dim=4, filters_per_width=2,
                             seq_len=6, use_bias=True)
        ids = random_doc(seed, params)
        trace = forward(params, ids)
        expected = straight_line_logits(params, ids)
        assert np.max(np.abs(trace.logits - expected)) <= 1e-12


def test_forward_zero_all_columns_gives_dense_bias():
    params = tiny_params(3, use_bias=True)
    params.conv_bias = {n: np.zeros_like(b) for n, b in params.conv_bias.items()}
    params.dense_bias[:] = [0.3, -0.2, 1.1]
    ids = random_doc(3, params)
    trace = forward(params, ids, zero_columns=range(params.config.embed_dim))
    assert np.array_equal(trace.logits, params.dense_bias)


def test_forward_trace_invariants():
    params = tiny_params(4, use_bias=True)
    ids = random_doc(4, params)
    trace = forward(params, ids)
    assert abs(trace.probs.sum() - 1.0) <= 1e-9
    F = params.config.filters_per_width
    for w_idx, n in enumerate(params.config.filter_widths):
        post = trace.conv_post[n]
        assert np.array_equal(post, np.maximum(trace.conv_pre[n], 0.0))
        for f in range(F):
            assert trace.pooled[w_idx * F + f] == post[:, f].max()
            assert trace.pooled[w_idx * F + f] == post[trace.pool_argmax[n][f], f]


def test_forward_shape_errors():
    params = tiny_params(5)
    with pytest.raises(ShapeError):
        forward(params, np.zeros(3, dtype=np.int32))
    ids = random_doc(5, params)
    with pytest.raises(ShapeError):
        forward(params, ids, zero_columns=[params.config.embed_dim])
    with pytest.raises(ShapeError):
        forward(params, ids, zero_filters=[params.config.pooled_size])


def test_override_equivalence_zero_filter():
    params = tiny_params(6, use_bias=True)
    ids = random_doc(6, params)
    base = forward(params, ids)
    for f in (0, 3, params.config.pooled_size - 1):
        overridden = forward(params, ids, zero_filters=[f])
        pooled = base.pooled.copy()
        pooled[f] = 0.0
        manual = pooled @ params.dense_weights + params.dense_bias
        assert np.max(np.abs(overridden.logits - manual)) <= 1e-12


def test_batch_forward_agrees_with_single():
    params = tiny_params(7, use_bias=True)
    ids = np.stack([random_doc(s, params) for s in range(6)])
    preds, probs = predict_batch(params, ids)
    for i in range(len(ids)):
        cls, p = predict(params, ids[i])
        assert cls == preds[i]
        assert np.max(np.abs(p - probs[i])) <= 1e-12


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=30, deadline=None)
def test_softmax_normalized(seed):
    params = tiny_params(seed % 17, use_bias=True)
    ids = random_doc(seed, params)
    trace = forward(params, ids)
    assert abs(trace.probs.sum() - 1.0) <= 1e-9
    assert (trace.probs >= 0).all()


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def finite_difference(params, ids, target_class, j, k, h=1e-4):
    from attribkit.model import _forward_embedded
    emb = params.embedding[np.asarray(ids)].copy()
    plus = emb.copy()
    plus[j, k] += h
    minus = emb.copy()
    minus[j, k] -= h
    up = _forward_embedded(params, plus).logits[target_class]
    down = _forward_embedded(params, minus).logits[target_class]
    return (up - down) / (2 * h)


def test_gradient_wrt_pooled_is_dense_column():
    params = tiny_params(8, use_bias=True)
    ids = random_doc(8, params)
    for c in range(params.config.num_classes):
        _, d_pooled = gradients(params, ids, c)
        assert np.array_equal(d_pooled, params.dense_weights[:, c])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for seed in range(5):
        params = tiny_params(seed + 20, use_bias=True)
        ids = random_doc(seed + 20, params)
        d_emb, _ = gradients(params, ids, 1)
        for _ in range(20):
            j = int(rng.integers(0, params.config.seq_len))
            k = int(rng.integers(0, params.config.embed_dim))
            fd = finite_difference(params, ids, 1, j, k)
            denom = max(abs(fd), abs(d_emb[j, k]), 1e-8)
            worst = max(worst, abs(fd - d_emb[j, k]) / denom)
    assert worst <= 1e-4


def test_dead_relu_filter_passes_no_gradient():
    params = tiny_params(9)
    # force one filter's pre-activations negative everywhere, then route the
    # class logit only through that filter
    n = params.config.filter_widths[0]
    params.conv_weights[n][0][:] = 0.0
    params.conv_bias[n][0] = -1.0
    params.config.use_bias = True
    params.dense_weights[:] = 0.0
    params.dense_weights[0, 0] = 5.0
    ids = random_doc(9, params)
    d_emb, d_pooled = gradients(params, ids, 0)
    assert d_pooled[0] == 5.0
    assert np.array_equal(d_emb, np.zeros_like(d_emb))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_separable_corpus_reaches_high_accuracy(small_corpus):
    config = ModelConfig(vocab_size=small_corpus.vocab.size, num_classes=2, seq_len=20,
                         embed_dim=8, filters_per_width=4, use_bias=False, seed=1,
                         learning_rate=0.01, epochs=5, optimizer="adam")
    params, log = train(small_corpus, config)
    assert log[-1]["accuracy"] >= 0.95
    assert set(log[0]) == {"epoch", "loss", "accuracy", "val_loss", "val_accuracy"}


def test_train_zero_learning_rate_keeps_params(small_corpus):
    config = ModelConfig(vocab_size=small_corpus.vocab.size, num_classes=2, seq_len=20,
                         embed_dim=8, filters_per_width=4, seed=2,
                         learning_rate=0.0, epochs=1)
    params, _ = train(small_corpus, config)
    fresh = init_params(config)
    assert np.array_equal(params.embedding, fresh.embedding)
    assert np.array_equal(params.dense_weights, fresh.dense_weights)
    for n in config.filter_widths:
        assert np.array_equal(params.conv_weights[n], fresh.conv_weights[n])


def test_train_divergence_reports_epoch_and_batch(small_corpus):
    config = ModelConfig(vocab_size=small_corpus.vocab.size, num_classes=2, seq_len=20,
                         embed_dim=8, filters_per_width=4, seed=3,
                         learning_rate=1e9, epochs=2)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError, match="epoch"):
        train(small_corpus, config)


def test_train_deterministic(small_corpus):
    config = ModelConfig(vocab_size=small_corpus.vocab.size, num_classes=2, seq_len=20,
                         embed_dim=8, filters_per_width=4, use_bias=False, seed=4,
                         learning_rate=0.5, epochs=2)
    a, log_a = train(small_corpus, config)
    b, log_b = train(small_corpus, config)
    assert log_a == log_b
    assert np.array_equal(a.embedding, b.embedding)
    assert np.array_equal(a.dense_weights, b.dense_weights)


def test_train_adam_runs(small_corpus):
    config = ModelConfig(vocab_size=small_corpus.vocab.size, num_classes=2, seq_len=20,
                         embed_dim=8, filters_per_width=4, seed=4,
                         learning_rate=0.005, epochs=2, optimizer="adam")
    params, log = train(small_corpus, config)
    assert log[-1]["loss"] < log[0]["loss"]


def test_bias_free_training_keeps_biases_zero(small_model):
    params, _ = small_model
    assert not params.config.use_bias
    assert np.array_equal(params.dense_bias, np.zeros_like(params.dense_bias))
    for n in params.config.filter_widths:
        assert np.array_equal(params.conv_bias[n], np.zeros_like(params.conv_bias[n]))


def test_validation_accuracy_consistent_with_predict(small_corpus, small_model):
    params, log = small_model
    docs = small_corpus.validation_documents
    correct = sum(predict(params, d.token_ids)[0] == d.label for d in docs)
    assert log[-1]["val_accuracy"] == correct / len(docs)


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def test_predict_tie_breaks_to_lowest_class():
    params = tiny_params(10, num_classes=2)
    params.embedding[:] = 0.0
    params.dense_weights[:] = 0.0
    ids = random_doc(10, params)
    cls, probs = predict(params, ids)
    assert cls == 0
    assert probs[0] == probs[1]


def test_predict_large_margin():
    params = tiny_params(11, num_classes=2, use_bias=True)
    params.embedding[:] = 0.0
    params.conv_bias = {n: np.zeros_like(b) for n, b in params.conv_bias.items()}
    params.dense_bias[:] = [0.0, 5.0]
    ids = np.full(params.config.seq_len, 0, dtype=np.int32)
    cls, probs = predict(params, ids)
    assert cls == 1
    assert probs[1] > 0.99


# ---------------------------------------------------------------------------
# parameter files
# ---------------------------------------------------------------------------

def test_params_roundtrip_bitwise(tmp_path, small_model):
    params, _ = small_model
    path = tmp_path / "m.atpr"
    save_params(params, path)
    loaded = load_params(path)
    assert loaded.config == params.config
    for (name_a, a), (name_b, b) in zip(params.tensors(), loaded.tensors()):
        assert name_a == name_b
        assert np.array_equal(a, b)


def test_params_truncated_file(tmp_path, small_model):
    params, _ = small_model
    path = tmp_path / "m.atpr"
    save_params(params, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(CorruptParamsError):
        load_params(path)


def test_params_bad_magic(tmp_path, small_model):
    params, _ = small_model
    path = tmp_path / "m.atpr"
    save_params(params, path)
    blob = path.read_bytes()
    path.write_bytes(b"NOPE!" + blob[5:])
    with pytest.raises(CorruptParamsError):
        load_params(path)


def test_params_version_mismatch(tmp_path, small_model, monkeypatch):
    import attribkit.model as mmod
    params, _ = small_model
    path = tmp_path / "m.atpr"
    monkeypatch.setattr(mmod, "PARAMS_FORMAT_VERSION", 999)
    save_params(params, path)
    monkeypatch.undo()
    with pytest.raises(VersionMismatchError):
        load_params(path)


def test_params_cross_config_shape_error(tmp_path, small_model):
    params, _ = small_model
    path = tmp_path / "m.atpr"
    save_params(params, path)
    expected = ModelConfig(vocab_size=params.config.vocab_size + 5,
                           num_classes=params.config.num_classes,
                           seq_len=params.config.seq_len,
                           embed_dim=params.config.embed_dim,
                           filters_per_width=params.config.filters_per_width)
    with pytest.raises(ShapeError, match="vocab_size"):
        load_params(path, expected_config=expected)


def test_evaluate_matches_train_log(small_corpus, small_model):
    params, log = small_model
    docs = small_corpus.validation_documents
    ids = np.stack([d.token_ids for d in docs])
    labels = np.array([d.label for d in docs])
    loss, acc = evaluate(params, ids, labels)
    assert loss == log[-1]["val_loss"]
    assert acc == log[-1]["val_accuracy"]
