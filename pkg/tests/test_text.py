import pytest
from hypothesis import given, strategies as st

from tagalign.text import (CLS, CLS_ID, PAD_ID, SPECIAL_TOKENS, UNK_ID, Vocabulary, build_vocab, encode, tokenize)


def test_reserved_ids_and_small_corpus():
    v = build_vocab(["a a b"], 8)
    assert v.tokens[:6] == SPECIAL_TOKENS
    assert "a" in v and "b" in v
    assert v.id("a") < v.id("b")


def test_unknown_word_maps_to_unk():
    assert build_vocab(["cars wheels"], 16).id("boats") == UNK_ID


def test_vocab_is_deterministic_and_tie_broken_lexicographically():
    corpus = ["zeta alpha mid", "mid"]
    a, b = build_vocab(corpus, 16), build_vocab(corpus, 16)
    assert a == b and a.digest == b.digest
    assert a.tokens[6:] == ("mid", "alpha", "zeta")


def test_max_size_counts_reserved_tokens():
    v = build_vocab(["a a a b b c"], 8)
    assert len(v) == 8 and "c" not in v


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        build_vocab([], 10)


def test_encode_with_cls_prefix():
    v = build_vocab(["cars"], 8)
    seq = encode(v, "cars", 4, prepend=CLS)
    assert seq.ids == (CLS_ID, v.id("cars"), PAD_ID, PAD_ID)
    assert seq.mask == (1, 1, 0, 0)


def test_encode_truncates():
    v = build_vocab(["a b c d e f"], 16)
    seq = encode(v, "a b c d e f", 4)
    assert len(seq) == 4 and seq.mask == (1, 1, 1, 1)


def test_encode_rejects_short_max_len():
    with pytest.raises(ValueError):
        encode(build_vocab(["a"], 8), "a", 1)


def test_tokenizer_keeps_bracket_markers_and_splits_punctuation():
    assert tokenize("The answer is [2].") == ["the", "answer", "is", "[2]", "."]
    assert tokenize("[NODE] cars, wheels") == ["[node]", "cars", ",", "wheels"]


def test_vocabulary_file_round_trip(tmp_path):
    v = build_vocab(["cars wheels [1]"], 16)
    v.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json") == v


words = st.lists(st.sampled_from(["cars", "wheels", "soup", "[3]", "stars", "x-rays", ":", "."]), min_size=1,
                 max_size=12)


@given(words)
def test_decode_encode_round_trip(tokens):
    text = " ".join(tokens)
    v = build_vocab([text], 64)
    seq = encode(v, text, 32)
    assert v.decode(seq.ids) == " ".join(tokenize(text))
