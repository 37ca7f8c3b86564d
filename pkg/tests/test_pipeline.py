import json

import numpy as np
import pytest

from infiniretri.attention import AttentionTensor
from infiniretri.errors import (ConfigurationError, UnsupportedModeError,
                                WindowExceededError)
from infiniretri.pipeline import PipelineConfig, answer_from_cache, run
from infiniretri.providers import PlantedOracle, PlantedOracleSpec, Provider, ToyProvider
from infiniretri.textseg import segment_sentences
from infiniretri.tokenizer import ByteTokenizer
from infiniretri.toymodel import ToyModelSpec

TOK = ByteTokenizer()

DOC = ("The port opened at dawn. Cranes moved along the pier. "
       "The vault code is nine two five. Gulls circled the market stalls. "
       "Fishers sold the morning catch. Carts rolled uphill past the gate. "
       "The lighthouse keeper logged the tide. Nobody noticed the fog bank.")
QUESTION = "What is the vault code?"
NEEDLE = "The vault code is nine two five."

SMALL = PipelineConfig(chunk_size=48, top_k=8, phrase_token_num=3, max_new_tokens=8)


def oracle_for(needle=NEEDLE, **kwargs):
    return PlantedOracle(PlantedOracleSpec.plant({tuple(TOK.encode(needle)): 0.8},
                                                 **kwargs))


def test_config_validation_names_the_field():
    for field, bad in [("chunk_size", 0), ("top_k", 0), ("phrase_token_num", 0),
                       ("max_new_tokens", 0)]:
        with pytest.raises(ConfigurationError, match=field):
            PipelineConfig(**{field: bad}).validate()
    with pytest.raises(ConfigurationError, match="cache_mode"):
        PipelineConfig(cache_mode="magic").validate()
    with pytest.raises(ConfigurationError, match="layer"):
        PipelineConfig(layer="middle").validate()


def test_retrieves_needle_with_planted_attention():
    cfg = PipelineConfig(chunk_size=48, top_k=8, phrase_token_num=3,
                         max_new_tokens=64)   # room for the whole echoed needle
    trace = run(oracle_for(), DOC, QUESTION, cfg)
    sentences = segment_sentences(DOC, TOK)
    needle_id = next(s.id for s in sentences if NEEDLE in s.text)
    assert needle_id in trace.final_cache_ids
    assert trace.answer_text == NEEDLE


def test_forward_passes_count_chunks_plus_answer():
    trace = run(oracle_for(), DOC, QUESTION, SMALL)
    assert trace.chunk_count > 1
    assert trace.forward_passes == trace.chunk_count + 1
    assert len(trace.iterations) == trace.chunk_count


def test_merged_window_stays_bounded():
    trace = run(oracle_for(), DOC, QUESTION, SMALL)
    qlen = trace.question_token_count
    for it in trace.iterations:
        assert it.fed_tokens == it.cache_tokens_before + it.chunk_tokens + qlen
        assert it.fed_tokens <= SMALL.chunk_size + it.cache_tokens_before + qlen
    assert trace.fed_tokens_final == trace.final_cache_tokens + qlen
    assert trace.max_merged_tokens <= (SMALL.chunk_size + qlen
                                       + max(it.cache_tokens_before
                                             for it in trace.iterations))


def test_fed_ratio_shrinks_for_longer_documents():
    short = run(oracle_for(), DOC, QUESTION, SMALL)
    long_doc = DOC + " " + " ".join(
        f"Extra filler sentence number {i} says nothing new." for i in range(60))
    long = run(oracle_for(), long_doc, QUESTION, SMALL)
    assert long.document_tokens > 3 * short.document_tokens
    assert long.fed_token_ratio < short.fed_token_ratio


def test_lossless_fallback_matches_single_window_generation():
    provider = ToyProvider(ToyModelSpec(seed=9))
    cfg = PipelineConfig(chunk_size=64, top_k=10_000, phrase_token_num=3,
                         max_new_tokens=6)
    trace = run(provider, DOC, QUESTION, cfg)
    sentences = segment_sentences(DOC, provider)
    assert trace.final_cache_ids == tuple(s.id for s in sentences)
    single = provider.generate(provider.encode(DOC) + provider.encode(QUESTION), 6)
    assert list(trace.answer_token_ids) == single


def test_empty_document_answers_from_question_alone():
    provider = ToyProvider(ToyModelSpec(seed=1))
    trace = run(provider, "", QUESTION, SMALL)
    assert trace.chunk_count == 0 and trace.document_tokens == 0
    assert trace.final_cache_ids == ()
    assert trace.forward_passes == 1
    assert trace.fed_token_ratio == 0.0
    direct = provider.generate(provider.encode(QUESTION), SMALL.max_new_tokens)
    assert list(trace.answer_token_ids) == direct


def test_empty_question_rejected():
    with pytest.raises(ConfigurationError):
        run(ToyProvider(), DOC, "", SMALL)


def test_window_exceeded_error_names_the_iteration():
    provider = ToyProvider(ToyModelSpec(max_window=40))
    with pytest.raises(WindowExceededError, match="iteration 0"):
        run(provider, DOC, QUESTION,
            PipelineConfig(chunk_size=64, top_k=4, phrase_token_num=3))


class _ZeroAttention(Provider):
    """Gives the context no attention at all; retrieval must keep nothing."""

    name = "zero"

    def __init__(self):
        self.layers = 1
        self.max_window = 1 << 20
        self.vocab_size = 257
        self._tok = ByteTokenizer()

    def encode(self, text):
        return self._tok.encode(text)

    def decode(self, tokens):
        return self._tok.decode(tokens)

    def get_attention(self, tokens, layer, query_range):
        heads = np.zeros((1, len(query_range), len(tokens)))
        heads[:, :, -1] = 1.0   # everything lands on the final question token
        return AttentionTensor(0, heads, query_range, range(0, len(tokens)))

    def generate(self, tokens, max_new_tokens):
        return [42]


def test_all_zero_context_scores_retain_nothing():
    trace = run(_ZeroAttention(), DOC, QUESTION, SMALL)
    assert trace.final_cache_ids == ()
    assert all(it.cache_tokens_after == 0 for it in trace.iterations)


def test_question_is_never_cached():
    trace = run(oracle_for(), DOC, QUESTION, SMALL)
    doc_ids = {s.id for s in segment_sentences(DOC, TOK)}
    assert set(trace.final_cache_ids) <= doc_ids


def test_trace_serialization_is_deterministic():
    a = run(oracle_for(), DOC, QUESTION, SMALL).to_json()
    b = run(oracle_for(), DOC, QUESTION, SMALL).to_json()
    assert a == b
    parsed = json.loads(a)
    assert parsed["forward_passes"] == parsed["chunk_count"] + 1


def test_answer_from_cache_uses_cache_plus_question_only():
    provider = ToyProvider(ToyModelSpec(seed=3))
    sentences = segment_sentences(DOC, provider)
    from infiniretri.cache import CacheState, update
    cache = update(CacheState.empty(), tuple(sentences[:2]))
    text, tokens, fed = answer_from_cache(provider, cache,
                                          provider.encode(QUESTION), 5)
    assert fed == cache.token_total + len(provider.encode(QUESTION))
    assert provider.decode(list(tokens)) == text


# -- key/value state mode -------------------------------------------------------


def test_kv_state_mode_requires_session_support():
    with pytest.raises(UnsupportedModeError):
        run(oracle_for(), DOC, QUESTION,
            PipelineConfig(chunk_size=48, top_k=8, phrase_token_num=3,
                           cache_mode="kv_state"))


def test_kv_state_mode_completes_on_toy_model():
    provider = ToyProvider(ToyModelSpec(seed=5))
    cfg = PipelineConfig(chunk_size=48, top_k=8, phrase_token_num=3,
                         max_new_tokens=6, cache_mode="kv_state")
    trace = run(provider, DOC, QUESTION, cfg)
    assert trace.forward_passes == trace.chunk_count + 1
    assert trace.chunk_count > 1
    doc_ids = {s.id for s in segment_sentences(DOC, provider)}
    assert set(trace.final_cache_ids) <= doc_ids
    assert trace.answer_token_ids is not None


def test_kv_state_accounting_counts_fresh_tokens_only():
    provider = ToyProvider(ToyModelSpec(seed=5))
    cfg = PipelineConfig(chunk_size=48, top_k=6, phrase_token_num=3,
                         max_new_tokens=4, cache_mode="kv_state")
    trace = run(provider, DOC, QUESTION, cfg)
    qlen = trace.question_token_count
    for it in trace.iterations:
        assert it.fed_tokens == it.chunk_tokens + qlen
