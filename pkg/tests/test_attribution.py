import numpy as np
import pytest

from attribkit.attribution import (
    AttributionError,
    AttributionTensor,
    attribute,
    attribution_difference,
    conservation_report,
    highlights_to_html,
    load_attribution,
    lrp,
    lrp_linear,
    saliency,
    save_attribution,
    word_highlights,
)
from attribkit.corpus import PAD_ID, Vocabulary
from attribkit.model import ModelConfig, forward, init_params

from conftest import random_doc, tiny_params


# ---------------------------------------------------------------------------
# lrp_linear
# ---------------------------------------------------------------------------

def test_lrp_linear_single_layer_example():
    r = lrp_linear(np.array([2.0, 0.0]), np.array([[0.5], [0.5]]),
                   np.array([0.0]), np.array([1.0]), epsilon=0.01)
    assert r.tolist() == [1.0, 0.0]


def test_lrp_linear_conserves_without_bias():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(size=6)
        w = rng.normal(size=(6, 4))
        r_out = rng.normal(size=4)
        r_in = lrp_linear(x, w, np.zeros(4), r_out, epsilon=0.01)
        assert abs(r_in.sum() - r_out.sum()) <= 1e-10 * max(1.0, abs(r_out.sum()))


def _oracle_two_layer(x, w1, b1, w2, b2, target_class, eps):
    """Hand-unrolled two-step relevance propagation, scalar arithmetic only."""
    n_in, n_hidden = w1.shape
    n_out = w2.shape[1]
    h_pre = [b1[j] + sum(x[i] * w1[i][j] for i in range(n_in)) for j in range(n_hidden)]
    h = [max(v, 0.0) for v in h_pre]
    out = [b2[k] + sum(h[j] * w2[j][k] for j in range(n_hidden)) for k in range(n_out)]

    def sign(v):
        return 1.0 if v >= 0.0 else -1.0

    def step(inputs, weights, bias, rel_out):
        n_i = len(inputs)
        n_o = len(rel_out)
        rel_in = [0.0] * n_i
        for k in range(n_o):
            if rel_out[k] == 0.0:
                continue
            contribs = [inputs[i] * weights[i][k] for i in range(n_i)]
            z = sum(contribs) + bias[k]
            denom = z + eps * sign(z)
            total_abs = sum(abs(c) for c in contribs)
            for i in range(n_i):
                numer = contribs[i]
                if total_abs > 0.0:
                    numer += abs(contribs[i]) * eps * sign(z) / total_abs
                rel_in[i] += numer * rel_out[k] / denom
        return rel_in

    rel_out = [0.0] * n_out
    rel_out[target_class] = out[target_class]
    rel_hidden = step(h, w2, b2, rel_out)
    rel_input = step(x, w1, b1, rel_hidden)
    return np.array(rel_input), np.array(rel_hidden), out[target_class]


def test_lrp_linear_matches_two_layer_oracle():
    rng = np.random.default_rng(123)
    for trial in range(25):
        x = rng.normal(size=3)
        w1 = rng.normal(size=(3, 2))
        b1 = rng.normal(size=2) if trial % 2 else np.zeros(2)
        w2 = rng.normal(size=(2, 2))
        b2 = rng.normal(size=2) if trial % 2 else np.zeros(2)
        target = trial % 2
        eps = 0.01

        h = np.maximum(w1.T @ x + b1, 0.0)
        out = w2.T @ h + b2
        rel_out = np.zeros(2)
        rel_out[target] = out[target]
        rel_hidden = lrp_linear(h, w2, b2, rel_out, eps)
        rel_input = lrp_linear(x, w1, b1, rel_hidden, eps)

        oracle_in, oracle_hidden, _ = _oracle_two_layer(x, w1, b1, w2, b2, target, eps)
        assert np.max(np.abs(rel_hidden - oracle_hidden)) <= 1e-10
        assert np.max(np.abs(rel_input - oracle_in)) <= 1e-10


# ---------------------------------------------------------------------------
# lrp on the CNN
# ---------------------------------------------------------------------------

def test_lrp_conservation_random_bias_free_models():
    for seed in range(100):
        params = tiny_params(seed)
        ids = random_doc(seed, params)
        tensor = lrp(params, ids, seed % params.config.num_classes)
        scale = max(1.0, abs(tensor.logit_value))
        assert abs(tensor.filter_scores.sum() - tensor.logit_value) <= 1e-6 * scale
        assert abs(tensor.R.sum() - tensor.logit_value) <= 1e-6 * scale


def test_lrp_bias_residual_equals_bias_share():
    params = tiny_params(7, use_bias=True)
    ids = random_doc(7, params)
    eps = 0.01
    target = 1
    trace = forward(params, ids)
    tensor = lrp(params, ids, target, epsilon=eps)

    def share(z, bias, rel):
        sign = 1.0 if z >= 0 else -1.0
        return bias * rel / (z + eps * sign)

    # dense layer: its bias absorbs part of the class relevance
    dense_share = share(trace.logits[target], params.dense_bias[target],
                        tensor.logit_value)
    pooled_residual = tensor.logit_value - tensor.filter_scores.sum()
    assert abs(pooled_residual - dense_share) <= 1e-10

    # conv layers: each winning window's bias absorbs part of its filter share
    conv_share = 0.0
    F = params.config.filters_per_width
    for w_idx, n in enumerate(params.config.filter_widths):
        for f in range(F):
            r_f = tensor.filter_scores[w_idx * F + f]
            if r_f == 0.0:
                continue
            t = int(trace.pool_argmax[n][f])
            z = trace.conv_pre[n][t, f]
            conv_share += share(z, params.conv_bias[n][f], r_f)
    embedded_residual = tensor.logit_value - tensor.R.sum()
    assert abs(embedded_residual - (dense_share + conv_share)) <= 1e-10


def _window_cover(params, trace):
    cover = set()
    for n in params.config.filter_widths:
        for f in range(params.config.filters_per_width):
            t = int(trace.pool_argmax[n][f])
            cover.update(range(t, t + n))
    return cover


def _pad_tail_params_and_doc():
    """Positive weights and a 3-token doc: winning windows sit at the front."""
    params = tiny_params(13, vocab_size=9, seq_len=12, embed_dim=3,
                         filters_per_width=2)
    rng = np.random.default_rng(99)
    params.embedding[:] = rng.uniform(0.2, 1.0, params.embedding.shape)
    params.embedding[PAD_ID] = 0.0
    for n in params.config.filter_widths:
        params.conv_weights[n][:] = rng.uniform(0.1, 0.5, params.conv_weights[n].shape)
    ids = np.zeros(12, dtype=np.int32)
    ids[:3] = [2, 3, 4]
    return params, ids


def test_winner_take_all_locality():
    params, ids = _pad_tail_params_and_doc()
    trace = forward(params, ids)
    cover = _window_cover(params, trace)
    uncovered = set(range(params.config.seq_len)) - cover
    assert uncovered, "test rig must leave some positions outside every winning window"
    for method in ("lrp", "sa"):
        tensor = attribute(params, ids, 0, method)
        for j in uncovered:
            assert np.array_equal(tensor.R[j], np.zeros(params.config.embed_dim))


def test_lrp_rejects_bad_epsilon():
    params = tiny_params(1)
    with pytest.raises(AttributionError):
        lrp(params, random_doc(1, params), 0, epsilon=0.0)


def test_aggregates_are_exact_sums():
    params = tiny_params(21, use_bias=True)
    ids = random_doc(21, params)
    for method in ("lrp", "sa"):
        tensor = attribute(params, ids, 2, method)
        assert np.max(np.abs(tensor.word_scores - tensor.R.sum(axis=1))) <= 1e-12
        assert np.max(np.abs(tensor.column_scores - tensor.R.sum(axis=0))) <= 1e-12


def test_sa_and_lrp_shapes_match():
    params = tiny_params(22)
    ids = random_doc(22, params)
    a = lrp(params, ids, 0)
    b = saliency(params, ids, 0)
    assert a.R.shape == b.R.shape
    assert a.word_scores.shape == b.word_scores.shape
    assert a.column_scores.shape == b.column_scores.shape
    assert a.filter_scores.shape == b.filter_scores.shape


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------

def test_saliency_identity_rig_returns_weight_rows():
    # width-1 filters with identity weights on a single-token doc reduce the
    # network to logits = embedding @ dense, whose gradient is a dense column
    config = ModelConfig(vocab_size=4, num_classes=3, seq_len=1, embed_dim=3,
                         filter_widths=(1,), filters_per_width=3, use_bias=False, seed=0)
    params = init_params(config)
    params.conv_weights[1] = np.eye(3)
    params.embedding[:] = np.abs(params.embedding) + 0.1
    ids = np.array([2], dtype=np.int32)
    for c in range(3):
        tensor = saliency(params, ids, c)
        assert np.array_equal(tensor.R[0], params.dense_weights[:, c])


def test_saliency_matches_finite_differences_tensorwise():
    from attribkit.model import _forward_embedded
    params = tiny_params(30, use_bias=True)
    ids = random_doc(30, params)
    tensor = saliency(params, ids, 0)
    rng = np.random.default_rng(5)
    h = 1e-4
    for _ in range(20):
        j = int(rng.integers(0, params.config.seq_len))
        k = int(rng.integers(0, params.config.embed_dim))
        emb = params.embedding[ids].copy()
        plus, minus = emb.copy(), emb.copy()
        plus[j, k] += h
        minus[j, k] -= h
        fd = (_forward_embedded(params, plus).logits[0]
              - _forward_embedded(params, minus).logits[0]) / (2 * h)
        denom = max(abs(fd), abs(tensor.R[j, k]), 1e-8)
        assert abs(fd - tensor.R[j, k]) / denom <= 1e-4


# ---------------------------------------------------------------------------
# attribution differences
# ---------------------------------------------------------------------------

def test_diff_same_class_is_zero():
    params = tiny_params(31)
    ids = random_doc(31, params)
    a = lrp(params, ids, 1, doc_id=0)
    b = lrp(params, ids, 1, doc_id=0)
    diff = attribution_difference(a, b)
    assert np.array_equal(diff.column_diffs, np.zeros_like(diff.column_diffs))
    assert np.array_equal(diff.filter_diffs, np.zeros_like(diff.filter_diffs))


def test_diff_antisymmetry():
    params = tiny_params(32)
    ids = random_doc(32, params)
    a = lrp(params, ids, 0, doc_id=0)
    b = lrp(params, ids, 2, doc_id=0)
    ab = attribution_difference(a, b)
    ba = attribution_difference(b, a)
    assert np.array_equal(ab.column_diffs, -ba.column_diffs)
    assert np.array_equal(ab.filter_diffs, -ba.filter_diffs)


def test_diff_elementwise_subtraction_oracle():
    rng = np.random.default_rng(8)
    ids = np.arange(5, dtype=np.int32)

    def fake(cls, R, filt):
        return AttributionTensor(doc_id=3, target_class=cls, method="lrp", R=R,
                                 word_scores=R.sum(axis=1), column_scores=R.sum(axis=0),
                                 filter_scores=filt, logit_value=1.0, epsilon=0.01,
                                 token_ids=ids)

    r_a, r_b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    f_a, f_b = rng.normal(size=6), rng.normal(size=6)
    diff = attribution_difference(fake(0, r_a, f_a), fake(1, r_b, f_b))
    for k in range(4):
        assert diff.column_diffs[k] == r_a.sum(axis=0)[k] - r_b.sum(axis=0)[k]
    for f in range(6):
        assert diff.filter_diffs[f] == f_a[f] - f_b[f]


def test_diff_rejects_mismatches():
    params = tiny_params(33)
    ids = random_doc(33, params)
    a = lrp(params, ids, 0, doc_id=0)
    b = saliency(params, ids, 1, doc_id=0)
    with pytest.raises(AttributionError):
        attribution_difference(a, b)
    c = lrp(params, ids, 1, doc_id=5)
    with pytest.raises(AttributionError):
        attribution_difference(a, c)


# ---------------------------------------------------------------------------
# conservation report
# ---------------------------------------------------------------------------

def test_conservation_report_bias_free(small_corpus, small_model):
    params, _ = small_model
    docs = small_corpus.validation_documents[:20]
    records = conservation_report(params, docs, class_policy="predicted")
    assert len(records) == 20
    assert not any(r.flagged for r in records)


def test_conservation_report_true_class_policy(small_corpus, small_model):
    params, _ = small_model
    docs = small_corpus.validation_documents[:5]
    records = conservation_report(params, docs, class_policy="true")
    assert [r.target_class for r in records] == [d.label for d in docs]


def test_conservation_residual_changes_with_epsilon():
    params = tiny_params(40, use_bias=True)

    class Doc:
        doc_id = 0
        label = 0
        token_ids = random_doc(40, params)

    small = conservation_report(params, [Doc()], class_policy=0, epsilon=0.01)[0]
    large = conservation_report(params, [Doc()], class_policy=0, epsilon=0.1)[0]
    assert small.residual_pooled != large.residual_pooled


# ---------------------------------------------------------------------------
# highlights
# ---------------------------------------------------------------------------

def _vocab():
    return Vocabulary(token_to_id={"red": 2, "blue": 3, "dot": 4},
                      id_to_token=["<pad>", "<unk>", "red", "blue", "dot"])


def _tensor_with_scores(word_scores, token_ids):
    L = len(token_ids)
    R = np.zeros((L, 2))
    R[:, 0] = word_scores
    return AttributionTensor(doc_id=0, target_class=0, method="lrp", R=R,
                             word_scores=np.asarray(word_scores, dtype=float),
                             column_scores=R.sum(axis=0), filter_scores=np.zeros(3),
                             logit_value=0.0, epsilon=0.01,
                             token_ids=np.asarray(token_ids, dtype=np.int32))


def test_highlights_all_zero_scores():
    t = _tensor_with_scores([0.0, 0.0, 0.0], [2, 3, 4])
    hs = word_highlights(t, _vocab())
    assert [h.intensity for h in hs] == [0.0, 0.0, 0.0]
    assert [h.sign for h in hs] == [0, 0, 0]


def test_highlights_single_nonzero_gets_full_intensity():
    t = _tensor_with_scores([0.0, -0.5, 0.0], [2, 3, 4])
    hs = word_highlights(t, _vocab())
    assert hs[1].intensity == 1.0
    assert hs[1].sign == -1


def test_highlights_mixed_signs_and_pad_omitted():
    t = _tensor_with_scores([0.4, -0.2, 0.1, 0.9], [2, 3, 4, PAD_ID])
    hs = word_highlights(t, _vocab())
    assert len(hs) == 3  # pad dropped
    assert sum(1 for h in hs if h.sign > 0) == 2
    assert sum(1 for h in hs if h.sign < 0) == 1
    assert hs[0].intensity == 1.0  # 0.4 is the largest |score| among kept tokens
    html = highlights_to_html(hs)
    assert html.count("rgba(214, 39, 40") == 2   # red spans
    assert html.count("rgba(31, 119, 180") == 1  # blue spans


def test_highlight_sum_matches_logit_on_full_length_doc(small_corpus, small_model):
    from attribkit.corpus import encode, tokenize
    params, _ = small_model
    doc = small_corpus.documents[0]
    tokens = tokenize(doc.raw_text)
    tokens = (tokens * 3)[:small_corpus.seq_len]  # no pad positions left
    ids = encode(tokens, small_corpus.vocab, small_corpus.seq_len)
    assert (ids != PAD_ID).all()
    tensor = lrp(params, ids, doc.label, doc_id=doc.doc_id)
    hs = word_highlights(tensor, small_corpus.vocab)
    total = sum(h.word_score for h in hs)
    assert abs(total - tensor.logit_value) <= 1e-6 * max(1.0, abs(tensor.logit_value))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_attribution_roundtrip(tmp_path):
    params = tiny_params(50, use_bias=True)
    ids = random_doc(50, params)
    tensor = lrp(params, ids, 1, doc_id=77)
    path = tmp_path / "t.bin"
    save_attribution(tensor, path)
    loaded = load_attribution(path)
    assert loaded.doc_id == 77
    assert loaded.target_class == 1
    assert loaded.method == "lrp"
    assert loaded.epsilon == tensor.epsilon
    assert loaded.logit_value == tensor.logit_value
    assert np.array_equal(loaded.R, tensor.R)
    assert np.array_equal(loaded.word_scores, tensor.word_scores)
    assert np.array_equal(loaded.column_scores, tensor.column_scores)
    assert np.array_equal(loaded.filter_scores, tensor.filter_scores)
    assert np.array_equal(loaded.token_ids, tensor.token_ids)
