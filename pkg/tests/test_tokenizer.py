import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedkit.errors import DataError, ParameterError
from embedkit.tokenizer import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    Vocab,
    decode,
    encode,
    encode_batch,
    merge_vocab,
    pre_tokenize,
    train_vocab,
)

CORPUS = [
    "the cat sat on the mat .",
    "the dog sat on the log .",
    "a cat and a dog met on the mat .",
    "cats and dogs sat together !",
]


def vocab_of(*tokens):
    return Vocab(SPECIAL_TOKENS + tuple(tokens))


def test_hand_run_merges():
    # base: 5 specials + a, b, ##a, ##b; every pair has count 2, so ties go to the pair seen first.
    # (a, ##a) -> aa; then (##a, ##b) predates the new (aa, ##a) -> ##ab; then (aa, ##ab) -> aaab
    v = train_vocab(["aaab", "aaab"], 12, min_freq=1)
    assert v.tokens == SPECIAL_TOKENS + ("a", "b", "##a", "##b", "aa", "##ab", "aaab")


def test_merges_stop_below_min_freq():
    v = train_vocab(["aaab"], 12, min_freq=2)
    assert len(v) == 9


def test_target_below_alphabet_is_rejected():
    with pytest.raises(ParameterError):
        train_vocab(["abcdef"], 10)


def test_empty_corpus():
    with pytest.raises(DataError):
        train_vocab([], 50)
    with pytest.raises(DataError):
        train_vocab(["   ", ""], 50)


def test_training_is_deterministic(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    train_vocab(CORPUS, 60).save(a)
    train_vocab(CORPUS, 60).save(b)
    assert a.read_bytes() == b.read_bytes()
    assert Vocab.load(a).tokens == train_vocab(CORPUS, 60).tokens


def test_size_is_exact_when_achievable():
    assert len(train_vocab(CORPUS, 50, min_freq=1)) == 50
    assert len(train_vocab(CORPUS, 500, min_freq=1)) < 500  # merges run out


def test_merge_examples():
    v = train_vocab(CORPUS, 60)
    assert merge_vocab(v, v).tokens == v.tokens
    a, b = vocab_of("x", "y", "##z"), vocab_of("p", "q")
    merged = merge_vocab(a, b)
    assert len(merged) == len(a) + len(b) - len(SPECIAL_TOKENS)
    assert merged.tokens == SPECIAL_TOKENS + ("x", "y", "##z", "p", "q")
    overlap = merge_vocab(a, vocab_of("y", "w"))
    assert len(overlap) <= len(a) + 7
    assert overlap.tokens[-1] == "w"


def test_encode_empty_text():
    seq = encode(vocab_of("a"), "", 6)
    assert seq.ids.tolist() == [CLS_ID, SEP_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
    assert seq.attention_mask.tolist() == [1, 1, 0, 0, 0, 0]


def test_greedy_longest_match():
    v = vocab_of("un", "##happy", "u", "##n")
    assert encode(v, "unhappy", 4).ids.tolist() == [CLS_ID, v.id_of("un"), v.id_of("##happy"), SEP_ID]


def test_unmatched_word_is_unk():
    v = vocab_of("a", "##b")
    assert encode(v, "ab c", 5).ids.tolist() == [CLS_ID, v.id_of("a"), v.id_of("##b"), UNK_ID, SEP_ID]


def test_truncation_keeps_sep():
    v = train_vocab(CORPUS, 60)
    seq = encode(v, " ".join(["the cat sat"] * 20), 8)
    assert seq.ids[-1] == SEP_ID and seq.attention_mask.sum() == 8
    with pytest.raises(ParameterError):
        encode(v, "x", 2)


def test_decode_roundtrips_whole_words():
    v = train_vocab(CORPUS, 80, min_freq=1)
    for tok in v.tokens[len(SPECIAL_TOKENS):]:
        if not tok.startswith("##"):
            assert decode(v, encode(v, tok, 16).ids) == tok


def test_pre_tokenize_splits_punctuation():
    assert pre_tokenize("Ahoj, světe!") == ["Ahoj", ",", "světe", "!"]
    assert pre_tokenize("ABC", lowercase=True) == ["abc"]


def test_vocab_validation():
    with pytest.raises(DataError):
        Vocab(("a", "b"))
    with pytest.raises(DataError):
        vocab_of("a", "a")


def test_encode_batch_shapes():
    v = train_vocab(CORPUS, 60)
    ids, mask = encode_batch(v, CORPUS, 12)
    assert ids.shape == mask.shape == (4, 12)
    assert (ids[mask == 0] == PAD_ID).all()
    empty_ids, _ = encode_batch(v, [], 12)
    assert empty_ids.shape == (0, 12)


words = st.text(alphabet="abcde", min_size=1, max_size=6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=5).map(" ".join), min_size=1, max_size=8))
def test_any_word_over_known_characters_is_covered(lines):
    v = train_vocab(lines, 40, min_freq=1)
    for line in lines:
        seq = encode(v, line, 64)
        assert UNK_ID not in seq.ids.tolist()
        assert decode(v, seq.ids) == " ".join(line.split())


@settings(max_examples=60, deadline=None)
@given(st.text(max_size=40), st.integers(3, 12))
def test_encode_is_total(text, max_len):
    v = train_vocab(CORPUS, 60)
    seq = encode(v, text, max_len)
    n = int(seq.attention_mask.sum())
    assert seq.ids[0] == CLS_ID and seq.ids[n - 1] == SEP_ID and len(seq.ids) == max_len
    assert (seq.ids[n:] == PAD_ID).all()
