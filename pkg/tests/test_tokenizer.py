"""Tokenizer round-trip and splitting behavior."""

from hypothesis import given, settings
from hypothesis import strategies as st

from ragmeter import tokenizer


def test_roundtrip_simple():
    text = "Hello world. This is a test!  Second   paragraph."
    assert "".join(tokenizer.encode(text)) == text


def test_whitespace_attaches_to_following_token():
    assert tokenizer.encode("a  b") == ["a", "  b"]
    assert tokenizer.encode("  leading") == ["  leading"]


def test_trailing_and_pure_whitespace():
    assert tokenizer.encode("x  ") == ["x  "]
    assert tokenizer.encode("   ") == ["   "]
    assert tokenizer.encode("") == []


def test_punctuation_is_its_own_token():
    assert tokenizer.encode("end. Next") == ["end", ".", " Next"]


def test_long_words_split_into_bounded_pieces():
    tokens = tokenizer.encode("a" * 30)
    assert tokens == ["a" * 12, "a" * 12, "a" * 6]
    assert all(len(t.strip()) <= tokenizer.MAX_WORD_PIECE for t in tokens)


def test_count_tokens_matches_encode():
    text = "alpha beta; gamma."
    assert tokenizer.count_tokens(text) == len(tokenizer.encode(text))


@given(st.text(max_size=400))
@settings(max_examples=300, deadline=None)
def test_roundtrip_property(text):
    """Concatenating tokens must restore any input exactly."""
    assert "".join(tokenizer.encode(text)) == text


@given(st.text(alphabet=st.characters(categories=("Lu", "Ll", "Nd", "Zs", "Po")), max_size=200))
@settings(max_examples=200, deadline=None)
def test_no_token_is_empty(text):
    assert all(tokenizer.encode(text))
