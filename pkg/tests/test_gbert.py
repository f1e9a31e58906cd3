import math
import string

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbert_g2p.autodiff import Tensor
from gbert_g2p.checkpoint import from_bytes, to_bytes
from gbert_g2p.data import attach_language_embedding_ids, build_word_vocab
from gbert_g2p.gbert import (GBERT, IGNORE, PretrainConfig, apply_masking, collate_masked, gbert_from_checkpoint,
                             mlm_loss, num_to_mask, pretrain)
from gbert_g2p.rng import stream
from gbert_g2p.synthetic import ToyLanguage
from gbert_g2p.transformer import ModelConfig

VOCAB = build_word_vocab([string.ascii_lowercase], languages=["en", "nl"])
TINY = ModelConfig(gbert_layers=1, d_model=16, num_heads=2, d_ffn=32, dropout_p=0.1, max_len=16)


@pytest.mark.parametrize("length,ratio,expected", [
    (5, 0.2, 1), (8, 0.2, 2), (2, 0.2, 1), (1, 0.3, 1), (10, 0.15, 2), (3, 0.5, 2), (15, 0.2, 3), (7, 0.3, 2),
])
def test_num_to_mask(length, ratio, expected):
    assert num_to_mask(length, ratio) == expected


@given(st.integers(1, 40), st.floats(0.01, 0.99))
def test_num_to_mask_bounds(length, ratio):
    n = num_to_mask(length, ratio)
    assert 1 <= n <= length
    assert abs(n - ratio * length) <= 0.5 or n == 1


def test_language_tag_is_never_masked():
    rng = stream(0, "t")
    cfg = PretrainConfig()
    ids, lang = attach_language_embedding_ids("abcdefgh", "nl", VOCAB)
    for _ in range(500):
        ex = apply_masking(ids, cfg, rng, VOCAB, lang)
        assert 0 not in ex.masked_positions
        assert ex.input_ids[0] == ids[0]
        assert len(ex.masked_positions) == num_to_mask(8, 0.2)


def test_masking_is_deterministic_per_stream():
    ids = VOCAB.encode("pronunciation")
    a = apply_masking(ids, PretrainConfig(), stream(5, "m"), VOCAB)
    b = apply_masking(ids, PretrainConfig(), stream(5, "m"), VOCAB)
    assert np.array_equal(a.input_ids, b.input_ids) and np.array_equal(a.masked_positions, b.masked_positions)


def test_replacement_categories_monte_carlo():
    # 2e4 words of length 10 -> 4e4 masked positions; 3 sigma of a 10% share is about 0.5%
    rng = stream(1, "mc")
    cfg = PretrainConfig()
    counts = np.zeros(3)
    for _ in range(20000):
        word = rng.integers(VOCAB.num_reserved, len(VOCAB), size=10)
        ex = apply_masking(word, cfg, rng, VOCAB)
        got = ex.input_ids[ex.masked_positions]
        orig = word[ex.masked_positions]
        counts += [(got == VOCAB.mask).sum(), ((got != VOCAB.mask) & (got != orig)).sum(), (got == orig).sum()]
    share = counts / counts.sum()
    # a random replacement equals the original 1/26 of the time and is then indistinguishable from "keep"
    coincide = 0.1 / 26
    np.testing.assert_allclose(share, [0.8, 0.1 - coincide, 0.1 + coincide], atol=0.01)


def test_masking_rejects_all_special_word():
    with pytest.raises(ValueError):
        apply_masking([VOCAB.stoi["<en>"]], PretrainConfig(), stream(0, "x"), VOCAB)


def _batch(seed=0, n=4):
    rng = stream(seed, "batch")
    exs = [apply_masking(VOCAB.encode(w), PretrainConfig(), rng, VOCAB) for w in ["grapheme", "phoneme", "abc", "zz"][:n]]
    return collate_masked(exs, VOCAB.pad)


def test_uniform_predictions_give_log_vocab_loss():
    batch = _batch()
    model = lambda ids, pad, lang, rng=None: Tensor(np.zeros(ids.shape + (len(VOCAB),)))  # noqa: E731
    assert mlm_loss(batch, model).item() == pytest.approx(math.log(len(VOCAB)), rel=1e-6)


def test_leaked_targets_give_near_zero_loss():
    batch = _batch()
    tgt = np.where(batch.targets == IGNORE, 0, batch.targets)

    def oracle(ids, pad, lang, rng=None):
        return Tensor(np.eye(len(VOCAB))[tgt] * 50.0)

    assert mlm_loss(batch, oracle).item() < 1e-10


def test_loss_ignores_unmasked_positions():
    batch = _batch()
    base = np.random.default_rng(0).normal(size=batch.input_ids.shape + (len(VOCAB),))
    other = base.copy()
    unmasked = batch.targets == IGNORE
    other[unmasked] = np.random.default_rng(1).normal(size=other[unmasked].shape) * 10
    f = lambda arr: (lambda ids, pad, lang, rng=None: Tensor(arr))  # noqa: E731
    assert mlm_loss(batch, f(base)).item() == mlm_loss(batch, f(other)).item()


def test_absent_graphemes_get_zero_embedding_gradient():
    model = GBERT(TINY, len(VOCAB), 2, stream(0, "g")).eval()
    batch = _batch()
    mlm_loss(batch, model).backward()
    present = np.unique(batch.input_ids)
    absent = np.setdiff1d(np.arange(len(VOCAB)), present)
    grad = model.embed.tokens.weight.grad
    assert np.all(grad[absent] == 0.0)
    assert np.any(grad[present] != 0.0)


def test_single_language_embedding_is_a_constant_offset():
    model = GBERT(TINY, len(VOCAB), 1, stream(0, "g"))
    ids = np.array([VOCAB.encode("shift")])
    offset = model.embed_pre_norm(ids).data - model.embed(ids).data
    np.testing.assert_allclose(offset, np.broadcast_to(offset[0, 0], offset.shape), atol=1e-6)


def _toy_items(n, seed=0):
    return [(w, None) for w in ToyLanguage(0).words(n, seed)]


def test_pretrain_is_deterministic_and_splits_disjointly():
    cfg = PretrainConfig(batch_size=16, max_steps=6, eval_interval=3, seed=3)
    a = pretrain(_toy_items(120), cfg, TINY)
    b = pretrain(_toy_items(120), cfg, TINY)
    for k, v in a.model.state_dict().items():
        assert np.array_equal(v, b.model.state_dict()[k])
    assert a.log == b.log
    assert not set(a.train_words) & set(a.valid_words)
    assert len(a.valid_words) == 12


def test_pretrain_rejects_tiny_wordlist():
    with pytest.raises(ValueError):
        pretrain(_toy_items(10), PretrainConfig(batch_size=64), TINY)


def test_pretrain_bilingual_items_and_checkpoint_round_trip():
    items = [(w, "en") for w in ToyLanguage(0).words(40, 1)] + [(w, "nl") for w in ToyLanguage(1).words(40, 2)]
    res = pretrain(items, PretrainConfig(batch_size=8, max_steps=2, eval_interval=2), TINY, languages=["en", "nl"])
    assert res.vocab.language_tags == ["<en>", "<nl>"]
    model, vocab = gbert_from_checkpoint(from_bytes(to_bytes(res.checkpoint({"seed": 0}))))
    assert vocab == res.vocab
    ids, lang = attach_language_embedding_ids("bada", "nl", vocab)
    ids, lang = np.array([ids]), np.array([lang])
    pad = np.ones_like(ids, dtype=bool)
    np.testing.assert_array_equal(model(ids, pad, lang).data, res.model(ids, pad, lang).data)


@settings(max_examples=30, deadline=None)
@given(st.text(alphabet=string.ascii_lowercase, min_size=1, max_size=15), st.integers(0, 1000))
def test_masking_only_touches_selected_positions(word, seed):
    ex = apply_masking(VOCAB.encode(word), PretrainConfig(), stream(seed, "h"), VOCAB)
    untouched = np.setdiff1d(np.arange(len(word)), ex.masked_positions)
    assert np.array_equal(ex.input_ids[untouched], ex.target_ids[untouched])
