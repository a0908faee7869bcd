"""Shared fixtures: planted-signal corpora and trained models."""

from __future__ import annotations

import numpy as np
import pytest

from attribkit.corpus import load_corpus
from attribkit.model import ModelConfig, ModelParams, init_params, train
from attribkit.synthetic import SyntheticSpec, generate, write_corpus


def make_corpus(tmp_path, spec: SyntheticSpec, *, seq_len=30, max_size=500, load_seed=3):
    rows, manifest = generate(spec)
    corpus_path, _ = write_corpus(rows, manifest, tmp_path)
    return load_corpus(corpus_path, "csv", seq_len=seq_len, max_size=max_size, seed=load_seed)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Fast binary marker corpus for unit-level tests."""
    spec = SyntheticSpec(mode="markers", num_docs=300, num_classes=2, target_vocab=200,
                         min_markers=2, max_markers=4, min_len=10, max_len=16, seed=7)
    return make_corpus(tmp_path_factory.mktemp("small-corpus"), spec,
                       seq_len=20, max_size=200)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    config = ModelConfig(
        vocab_size=small_corpus.vocab.size, num_classes=2, seq_len=20,
        embed_dim=8, filters_per_width=4, use_bias=False, seed=9,
        learning_rate=0.01, epochs=5, optimizer="adam")
    params, log = train(small_corpus, config)
    return params, log


def tiny_params(seed: int, *, vocab_size=12, num_classes=3, seq_len=7, embed_dim=4,
                filters_per_width=2, widths=(3, 4, 5), use_bias=False) -> ModelParams:
    """Random small model; weights drawn wider than the training init so that
    forward activations are comfortably nonzero."""
    config = ModelConfig(vocab_size=vocab_size, num_classes=num_classes, seq_len=seq_len,
                         embed_dim=embed_dim, filters_per_width=filters_per_width,
                         filter_widths=widths, use_bias=use_bias, seed=seed)
    params = init_params(config)
    rng = np.random.default_rng(seed + 1000)
    params.embedding[:] = rng.normal(0, 0.8, params.embedding.shape)
    for n in config.filter_widths:
        params.conv_weights[n][:] = rng.normal(0, 0.8, params.conv_weights[n].shape)
        if use_bias:
            params.conv_bias[n][:] = rng.normal(0, 0.3, params.conv_bias[n].shape)
    params.dense_weights[:] = rng.normal(0, 0.8, params.dense_weights.shape)
    if use_bias:
        params.dense_bias[:] = rng.normal(0, 0.3, params.dense_bias.shape)
    return params


def random_doc(seed: int, params: ModelParams) -> np.ndarray:
    cfg = params.config
    rng = np.random.default_rng(seed + 2000)
    return rng.integers(2, cfg.vocab_size, size=cfg.seq_len).astype(np.int32)
