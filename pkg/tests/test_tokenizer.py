import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvgpt.tokenizer import (
    BOS1,
    BOS2,
    CLS1,
    EOS,
    NUM_SPECIAL,
    PAD,
    UNK,
    TokenStream,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    encode_ids,
    normalize,
)

WORDS = ["apple", "board", "chop", "dice", "egg", "fork", "grill", "heat", "ice", "jar"]


def test_specials_layout():
    v = build_vocab(["x"])
    assert PAD == 0
    assert v.itos[:NUM_SPECIAL] == ("[PAD]", "[UNK]", "[MASK]", "[EOS]", "[CLS1]", "[CLS2]", "[BOS1]", "[BOS2]")
    assert len(set(range(NUM_SPECIAL))) == NUM_SPECIAL and NUM_SPECIAL < len(v)


def test_build_vocab_counts():
    v = build_vocab(["a a b"])
    assert len(v) == 10
    assert v.itos[8:] == ("a", "b")


def test_build_vocab_case_folds_before_counting():
    v = build_vocab(["A a"], min_count=2)
    assert v.itos[8:] == ("a",)


def test_build_vocab_tie_break_is_alphabetical():
    v = build_vocab(["zeta alpha zeta beta alpha"])
    assert v.itos[8:] == ("alpha", "zeta", "beta")


def test_build_vocab_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([])


def test_build_vocab_is_deterministic():
    rng = np.random.default_rng(0)
    corpus = [" ".join(rng.choice(WORDS, 6)) for _ in range(100)]
    assert build_vocab(corpus).itos == build_vocab(list(corpus)).itos


def test_normalize_strips_punctuation():
    assert normalize("Now, ADD the egg!") == ["now", "add", "the", "egg"]


def test_encode_prefix_and_eos():
    v = build_vocab(["hello"])
    assert encode_ids(v, "hello", CLS1, True) == [CLS1, v.id("hello"), EOS]


def test_encode_unknown_word():
    v = build_vocab(["hello"])
    assert encode_ids(v, "goodbye", CLS1, True) == [CLS1, UNK, EOS]


def test_encode_truncation_keeps_prefix_and_eos():
    v = build_vocab([" ".join(WORDS)])
    ids = encode_ids(v, " ".join(WORDS), CLS1, True, max_len=5)
    assert len(ids) == 5
    assert ids[0] == CLS1 and ids[-1] == EOS
    assert ids[1:4] == [v.id(w) for w in WORDS[:3]]


def test_encode_rejects_tiny_max_len():
    with pytest.raises(ValueError):
        encode_ids(build_vocab(["a"]), "a", max_len=1)


def test_encode_returns_stream_with_mask():
    v = build_vocab(["a b"])
    s = encode(v, "a b", CLS1).padded(5)
    assert s.ids.tolist() == [CLS1, v.id("a"), v.id("b"), PAD, PAD]
    assert s.pad_mask.tolist() == [True, True, True, False, False]
    assert s.n_real == 3


def test_stream_rejects_mismatched_mask():
    with pytest.raises(ValueError):
        TokenStream(np.array([1, 2]), np.array([True]))


def test_decode_stops_at_eos_and_drops_specials():
    v = build_vocab(["a b c"])
    a, b, c = (v.id(t) for t in "abc")
    assert decode(v, [BOS2, a, b, EOS, c]) == "a b"


def test_decode_empty():
    assert decode(build_vocab(["a"]), []) == ""


def test_decode_rejects_out_of_range():
    v = build_vocab(["a"])
    with pytest.raises(IndexError):
        decode(v, [len(v)])


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["the cook adds the lemon", "then chop"])
    path = tmp_path / "vocab.txt"
    v.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == v.itos[8]  # line number = id - 8
    assert Vocabulary.load(path).itos == v.itos


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=12), st.sampled_from([None, CLS1]), st.booleans())
def test_round_trip_and_no_decoder_tokens(words, prefix, eos):
    v = build_vocab([" ".join(WORDS)])
    text = " ".join(words)
    ids = encode_ids(v, text, prefix, eos, max_len=32)
    assert BOS1 not in ids and BOS2 not in ids
    if prefix is not None:
        assert ids[0] == prefix
    assert decode(v, ids) == " ".join(normalize(text))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=40), st.integers(2, 12))
def test_truncation_respects_max_len(words, max_len):
    v = build_vocab([" ".join(WORDS)])
    ids = encode_ids(v, " ".join(words), CLS1, True, max_len=max_len)
    assert len(ids) <= max_len
    assert ids[0] == CLS1 and ids[-1] == EOS
