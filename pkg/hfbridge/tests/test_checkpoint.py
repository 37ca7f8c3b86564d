"""Checkpoint wrapper: tokenizer fidelity, attention shape/normalization,
generation, and window enforcement."""

import numpy as np
import pytest

from hfbridge import WindowExceeded

# Byte-level BPE is lossless by construction, so the round trip must be exact
# on arbitrary text -- including strings far outside the training corpus.
ROUND_TRIP_CORPUS = [
    "hello world",
    "Hello, World!",
    "  leading spaces",
    "trailing spaces  ",
    "tabs\tand\nnewlines",
    "multiple   internal   spaces",
    "ALL CAPS SHOUTING",
    "miXeD cAsE nOnSeNsE",
    "punctuation!?.,;:'\"()[]{}",
    "email-ish: someone@example.com",
    "url-ish: https://example.com/a/b?c=d&e=f",
    "numbers 0123456789 and 3.14159 and -42",
    "hex 0xDEADBEEF and binary 0b1010",
    "snake_case_identifier",
    "CamelCaseIdentifier",
    "kebab-case-identifier",
    "a",
    "Z",
    "0",
    " ",
    "  ",
    "\n",
    "\t",
    "na\u00efve caf\u00e9 r\u00e9sum\u00e9",
    "\u00fcber stra\u00dfe",
    "\u0391\u03b2\u03b3 greek",
    "\u043f\u0440\u0438\u0432\u0435\u0442 cyrillic",
    "\u4f60\u597d\u4e16\u754c",
    "\u65e5\u672c\u8a9e\u306e\u30c6\u30ad\u30b9\u30c8",
    "\ud55c\uad6d\uc5b4 \ud14d\uc2a4\ud2b8",
    "\u0645\u0631\u062d\u0628\u0627 arabic",
    "emoji \U0001f600 \U0001f680 \U0001f40d",
    "combining e\u0301 accent",
    "zero\u200bwidth space",
    "math \u2211 \u221a \u221e \u2260",
    "currency \u20ac \u00a3 \u00a5 $",
    "quotes \u201ccurly\u201d and \u2018single\u2019",
    "dashes \u2013 \u2014 -",
    "ellipsis\u2026 and more",
    "The quick brown fox jumps over the lazy dog.",
    "Sphinx of black quartz, judge my vow.",
    "a b c d e f g h i j k l m n o p q r s t u v w x y z",
    "word " * 20,
    "x" * 100,
    "1234567890" * 5,
    "json {\"key\": [1, 2, null]}",
    "xml <tag attr='v'>body</tag>",
    "path /usr/local/bin/thing",
    "windows C:\\Users\\name\\file.txt",
    "mixed \u4f60\u597d world \U0001f30d 42",
]


def test_round_trip_corpus_is_exact(model):
    assert len(ROUND_TRIP_CORPUS) >= 50
    for text in ROUND_TRIP_CORPUS:
        toks = model.encode(text)
        assert all(isinstance(t, int) for t in toks)
        assert model.decode(toks) == text


def test_handshake_facts_match_config(model):
    assert model.layers == 2
    assert model.heads == 2
    assert model.max_window == 512
    assert model.vocab_size > 256  # full byte alphabet plus merges and EOS
    assert isinstance(model.eos_id, int)


def test_attention_shape_and_normalization(model):
    toks = model.encode("The archivist files every report under seal.")
    n = len(toks)
    block = model.attention(toks, "last", n - 3, 3)
    assert block.shape == (model.heads, 3, n)
    assert block.dtype == np.float32
    np.testing.assert_allclose(block.sum(axis=-1), 1.0, atol=1e-4)
    assert (block >= 0).all()


def test_attention_is_causal(model):
    toks = model.encode("Cold machines hum in the basement.")
    n = len(toks)
    block = model.attention(toks, 0, 0, n)  # full square
    for row in range(n):
        assert np.abs(block[:, row, row + 1:]).max(initial=0.0) <= 1e-7


def test_attention_layer_selection(model):
    toks = model.encode("layers differ")
    last = model.attention(toks, "last", 0, len(toks))
    explicit = model.attention(toks, model.layers - 1, 0, len(toks))
    first = model.attention(toks, 0, 0, len(toks))
    np.testing.assert_array_equal(last, explicit)
    assert not np.allclose(first, last)


def test_attention_rejects_bad_ranges(model):
    toks = model.encode("short input")
    with pytest.raises(ValueError):
        model.attention([], "last", 0, 1)
    with pytest.raises(ValueError):
        model.attention(toks, "last", 0, len(toks) + 1)
    with pytest.raises(ValueError):
        model.attention(toks, "last", -1, 1)
    with pytest.raises(ValueError):
        model.attention(toks, "last", 0, 0)
    with pytest.raises(ValueError):
        model.attention(toks, 99, 0, 1)
    with pytest.raises(ValueError):
        model.attention(toks, -1, 0, 1)


def test_window_limit_enforced(model):
    over = [1] * (model.max_window + 1)
    with pytest.raises(WindowExceeded, match="window"):
        model.attention(over, "last", 0, 1)
    with pytest.raises(WindowExceeded, match="window"):
        model.generate(over, 4)


def test_generate_is_greedy_and_deterministic(model):
    prompt = model.encode("Rivers carve canyons")
    first = model.generate(prompt, 6)
    second = model.generate(prompt, 6)
    assert first == second
    assert 1 <= len(first) <= 6
    assert all(0 <= t < model.vocab_size for t in first)


def test_generate_stops_after_eos_if_produced(model):
    prompt = model.encode("Pack my box")
    out = model.generate(prompt, 32)
    if model.eos_id in out:
        assert out.index(model.eos_id) == len(out) - 1


def test_generate_rejects_zero_budget(model):
    with pytest.raises(ValueError):
        model.generate(model.encode("x"), 0)


def test_materialization_is_reproducible(checkpoint_dir, tmp_path):
    from hfbridge import CheckpointModel, materialize_tiny_checkpoint

    other = materialize_tiny_checkpoint(str(tmp_path / "again"), seed=0)
    twin = CheckpointModel(other)
    ref = CheckpointModel(checkpoint_dir)
    toks = ref.encode("determinism check across materializations")
    assert twin.encode("determinism check across materializations") == toks
    a = ref.attention(toks, "last", 0, len(toks))
    b = twin.attention(toks, "last", 0, len(toks))
    np.testing.assert_array_equal(a, b)
    assert ref.generate(toks, 5) == twin.generate(toks, 5)
