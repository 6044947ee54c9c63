import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedkit import tensor as T
from embedkit.encoder import (
    EncoderConfig,
    Pooling,
    embed_sentences,
    init_encoder,
    param_count,
    parameter_fingerprint,
    pool,
)
from embedkit.errors import DataError, ParameterError
from embedkit.tokenizer import PAD_ID, train_vocab

SMALL = EncoderConfig(layers=2, hidden=8, heads=2, max_len=8, vocab_size=20)


def batch(rng, rows=3, width=6, vocab=20):
    ids = rng.integers(5, vocab, size=(rows, width))
    mask = np.ones_like(ids)
    for r in range(rows):
        n = int(rng.integers(2, width + 1))
        ids[r, n:] = PAD_ID
        mask[r, n:] = 0
    return ids, mask


def test_same_seed_bit_identical():
    a, b = init_encoder(SMALL, 3), init_encoder(SMALL, 3)
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    assert parameter_fingerprint(a) != parameter_fingerprint(init_encoder(SMALL, 4))


def test_parameter_count_closed_form():
    # 20*8 + 8*8 + 2 * (4*(8*8+8) + (8*32+32) + (32*8+8) + 4*8), counted by hand
    assert init_encoder(SMALL, 0).num_parameters() == 1968 == param_count(SMALL)


def test_init_statistics():
    params = init_encoder(EncoderConfig(layers=1, hidden=64, heads=4, vocab_size=500), 0).params
    w = params["token_emb"].data
    # N(0, 0.02) truncated at 2 sigma has std 0.02 * 0.8796
    assert abs(w.std() - 0.0176) < 0.001 and np.abs(w).max() <= 0.04 + 1e-7
    np.testing.assert_array_equal(params["blocks.0.ln1.gamma"].data, 1.0)
    np.testing.assert_array_equal(params["blocks.0.attn.q.bias"].data, 0.0)


@pytest.mark.parametrize("bad", [dict(hidden=10, heads=4), dict(layers=0), dict(max_len=2),
                                 dict(vocab_size=5), dict(dropout_p=1.0)])
def test_invalid_config(bad):
    with pytest.raises(ParameterError):
        init_encoder(EncoderConfig(**{**SMALL.to_dict(), **bad}), 0)


def test_forward_shape_and_determinism(rng):
    model = init_encoder(SMALL, 0)
    ids, mask = batch(rng)
    out = model.forward(ids, mask)
    assert out.shape == (3, 6, 8)
    np.testing.assert_array_equal(out.data, model.forward(ids, mask).data)
    np.testing.assert_array_equal(model.forward(ids, mask, training=True, seed=5).data,
                                  model.forward(ids, mask, training=True, seed=5).data)
    assert not np.array_equal(model.forward(ids, mask, training=True, seed=5).data,
                              model.forward(ids, mask, training=True, seed=6).data)


def test_padding_never_leaks(rng):
    model = init_encoder(SMALL, 1)
    ids, mask = batch(rng, rows=4, width=8)
    mask[:, -2:] = 0
    ids[:, -2:] = PAD_ID
    before = model.forward(ids, mask).data
    ids2 = ids.copy()
    ids2[:, -2:] = rng.integers(5, 20, size=(4, 2))
    after = model.forward(ids2, mask).data
    real = mask.astype(bool)
    np.testing.assert_array_equal(before[real], after[real])


def test_out_of_range_token():
    model = init_encoder(SMALL, 0)
    with pytest.raises(DataError):
        model.forward(np.array([[1, 20, 2]]), np.ones((1, 3), dtype=int))


def test_pool_examples():
    states = T.Tensor(np.array([[[1.0, 3.0], [5.0, 1.0], [9.0, 9.0]]]))
    mask = np.array([[1, 1, 0]])
    np.testing.assert_allclose(pool(states, mask, Pooling.MEAN).data, [[3.0, 2.0]])
    np.testing.assert_allclose(pool(states, mask, Pooling.MAX).data, [[5.0, 3.0]])
    np.testing.assert_array_equal(pool(states, mask, "cls").data, states.data[:, 0, :])
    one = np.array([[1, 0, 0]])
    np.testing.assert_array_equal(pool(states, one, "mean").data, pool(states, one, "max").data)
    with pytest.raises(DataError):
        pool(states, np.zeros((1, 3)), "mean")


def test_embed_sentences_normalized_and_stable():
    texts = ["the cat sat", "a dog ran home", "the cat sat"]
    vocab = train_vocab(texts, 40, min_freq=1)
    model = init_encoder(EncoderConfig(layers=1, hidden=16, heads=2, max_len=10, vocab_size=len(vocab)), 0)
    for pooling in Pooling:
        emb = embed_sentences(model, vocab, texts, pooling, normalize=True)
        norms = np.linalg.norm(emb.astype(np.float64), axis=1)
        assert np.all(np.abs(norms - 1) <= 1e-6)
        np.testing.assert_array_equal(emb[0], emb[2])


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 5), st.integers(2, 8), st.integers(0, 10_000))
def test_batch_composition_does_not_change_rows(rows, width, seed):
    rng = np.random.default_rng(seed)
    model = init_encoder(SMALL, 2)
    ids, mask = batch(rng, rows, width)
    full = model.forward(ids, mask).data
    for r in range(rows):
        np.testing.assert_allclose(model.forward(ids[r:r + 1], mask[r:r + 1]).data[0], full[r], atol=1e-6)


def test_permuting_batch_permutes_rows(rng):
    model = init_encoder(SMALL, 4)
    ids, mask = batch(rng, rows=5, width=7)
    perm = rng.permutation(5)
    np.testing.assert_allclose(model.forward(ids[perm], mask[perm]).data, model.forward(ids, mask).data[perm],
                               atol=1e-6)


def test_desk_default_simcse_epoch_speed():
    import time

    from embedkit.encoder import DESK_DEFAULT
    from embedkit.recipes import TrainSettings, finetune_simcse

    rng = np.random.default_rng(0)
    cfg = EncoderConfig(**{**DESK_DEFAULT.to_dict(), "vocab_size": 500})
    model = init_encoder(cfg, 0)
    ids = rng.integers(5, 500, size=(1000, 16))
    start = time.process_time()
    finetune_simcse(model, ids, np.ones_like(ids), TrainSettings(lr=3e-5, batch_size=32, epochs=1))
    assert time.process_time() - start < 60
