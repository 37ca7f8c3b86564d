import numpy as np
import pytest

from infiniretri.tokenizer import ByteTokenizer


@pytest.fixture
def tok():
    return ByteTokenizer()


def test_vocab_covers_bytes_plus_eos(tok):
    assert tok.vocab_size == 257
    assert ByteTokenizer.EOS == 256


def test_ascii_round_trip(tok):
    text = "The quick brown fox jumps over the lazy dog."
    ids = tok.encode(text)
    assert all(0 <= t < 256 for t in ids)
    assert tok.decode(ids) == text


def test_unicode_round_trip(tok):
    text = "naïve café — 中文。emoji: 🦜"
    assert tok.decode(tok.encode(text)) == text


def test_encoding_is_concatenative(tok):
    # this is what makes per-sentence offsets exact in the flattened document
    rng = np.random.default_rng(11)
    alphabet = list("abc .!?中ü\n")
    for _ in range(200):
        a = "".join(rng.choice(alphabet, size=rng.integers(0, 12)))
        b = "".join(rng.choice(alphabet, size=rng.integers(0, 12)))
        assert tok.encode(a) + tok.encode(b) == tok.encode(a + b)


def test_empty_text_encodes_empty(tok):
    assert tok.encode("") == []
    assert tok.decode([]) == ""


def test_decode_skips_eos_and_out_of_range(tok):
    ids = tok.encode("hi") + [ByteTokenizer.EOS]
    assert tok.decode(ids) == "hi"


def test_decode_is_total_on_arbitrary_byte_ids(tok):
    # any sequence of in-range ids must decode without raising
    rng = np.random.default_rng(5)
    for _ in range(50):
        ids = rng.integers(0, 257, size=rng.integers(0, 40)).tolist()
        out = tok.decode(ids)
        assert isinstance(out, str)


def test_random_strings_round_trip(tok):
    rng = np.random.default_rng(99)
    pool = "abcdefgh ABC123.!?,;:'\"\n\tüßé中日🦉"
    for _ in range(300):
        text = "".join(rng.choice(list(pool), size=rng.integers(0, 60)))
        assert tok.decode(tok.encode(text)) == text
