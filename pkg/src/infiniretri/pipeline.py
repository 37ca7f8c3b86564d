"""Sliding-window retrieval loop.

Reads a document one bounded chunk at a time, asks the provider where the
question tokens attend, keeps the sentences that carry the most phrase-level
attention, and finally answers from the retained cache plus the question --
so no single provider call ever sees more than one chunk's worth of context
on top of the cache.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import aggregate_heads
from .cache import CacheState, MergedInput, merge, update
from .errors import ConfigurationError, UnsupportedModeError, WindowExceededError
from .providers import Provider
from .retrieval import (expand_to_sentences, phrase_importance, select_top_k,
                        token_importance)
from .textseg import Chunk, Sentence, build_chunks, segment_sentences

CACHE_MODES = ("token_ids", "kv_state")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one retrieval run. Defaults match the reference setting."""

    chunk_size: int = 1024
    top_k: int = 300
    phrase_token_num: int = 15
    layer: int | str = "last"
    max_new_tokens: int = 64
    cache_mode: str = "token_ids"

    def validate(self) -> None:
        if self.chunk_size < 1:
            raise ConfigurationError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.top_k < 1:
            raise ConfigurationError(f"top_k must be >= 1, got {self.top_k}")
        if self.phrase_token_num < 1:
            raise ConfigurationError(
                f"phrase_token_num must be >= 1, got {self.phrase_token_num}")
        if self.max_new_tokens < 1:
            raise ConfigurationError(
                f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.cache_mode not in CACHE_MODES:
            raise ConfigurationError(
                f"cache_mode must be one of {CACHE_MODES}, got {self.cache_mode!r}")
        if isinstance(self.layer, str) and self.layer != "last":
            raise ConfigurationError(f"layer must be an index or 'last', got {self.layer!r}")

    def as_dict(self) -> dict:
        return {
            "chunk_size": self.chunk_size, "top_k": self.top_k,
            "phrase_token_num": self.phrase_token_num, "layer": self.layer,
            "max_new_tokens": self.max_new_tokens, "cache_mode": self.cache_mode,
        }


@dataclass(frozen=True)
class IterationRecord:
    """Accounting for one chunk step."""

    index: int
    chunk_tokens: int
    cache_tokens_before: int
    fed_tokens: int              # tokens entering the provider this step
    retained_sentence_ids: tuple[int, ...]
    cache_tokens_after: int


@dataclass
class RunTrace:
    """Everything a run did, in a form that serializes deterministically."""

    provider_name: str
    config: dict
    layer_index: int
    document_tokens: int
    question_token_count: int
    chunk_count: int
    iterations: list[IterationRecord] = field(default_factory=list)
    final_cache_ids: tuple[int, ...] = ()
    final_cache_tokens: int = 0
    answer_text: str = ""
    answer_token_ids: tuple[int, ...] = ()
    forward_passes: int = 0
    fed_tokens_final: int = 0    # input size of the answering pass
    fed_tokens_total: int = 0    # summed over every pass
    max_merged_tokens: int = 0
    fed_token_ratio: float = 0.0  # answering-pass input / document tokens

    def to_dict(self) -> dict:
        return {
            "provider": self.provider_name,
            "config": self.config,
            "layer_index": self.layer_index,
            "document_tokens": self.document_tokens,
            "question_token_count": self.question_token_count,
            "chunk_count": self.chunk_count,
            "iterations": [
                {
                    "index": it.index,
                    "chunk_tokens": it.chunk_tokens,
                    "cache_tokens_before": it.cache_tokens_before,
                    "fed_tokens": it.fed_tokens,
                    "retained_sentence_ids": list(it.retained_sentence_ids),
                    "cache_tokens_after": it.cache_tokens_after,
                }
                for it in self.iterations
            ],
            "final_cache_ids": list(self.final_cache_ids),
            "final_cache_tokens": self.final_cache_tokens,
            "answer_text": self.answer_text,
            "answer_token_ids": list(self.answer_token_ids),
            "forward_passes": self.forward_passes,
            "fed_tokens_final": self.fed_tokens_final,
            "fed_tokens_total": self.fed_tokens_total,
            "max_merged_tokens": self.max_merged_tokens,
            "fed_token_ratio": self.fed_token_ratio,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _check_window(provider: Provider, size: int, stage: str,
                  cache: int, fresh: int, question: int) -> None:
    if size > provider.max_window:
        raise WindowExceededError(
            f"{stage}: merged input of {size} tokens (cache {cache} + chunk {fresh} "
            f"+ question {question}) exceeds the provider window of {provider.max_window}")


def _score_context(agg: np.ndarray, context_len: int, phrase_token_num: int) -> np.ndarray:
    """Token importance over the context columns only (question columns excluded)."""
    context = np.ascontiguousarray(agg[:, :context_len])
    features = phrase_importance(context, phrase_token_num)
    return token_importance(features)


def _pick_sentences(scores: np.ndarray, top_k: int,
                    merged: MergedInput) -> tuple[Sentence, ...]:
    if scores.size == 0 or float(scores.max()) <= 0.0:
        return ()
    positions = select_top_k(scores, top_k)
    return expand_to_sentences(positions, merged)


def answer_from_cache(provider: Provider, cache: CacheState, question_tokens: Sequence[int],
                      max_new_tokens: int) -> tuple[str, tuple[int, ...], int]:
    """Generate the final answer from retained sentences + question only.

    Returns (text, token ids, input size of the pass).
    """
    merged = merge(cache, None, question_tokens)
    _check_window(provider, len(merged.tokens), "answer stage",
                  cache.token_total, 0, len(question_tokens))
    out = provider.generate(list(merged.tokens), max_new_tokens)
    return provider.decode(out), tuple(int(t) for t in out), len(merged.tokens)


def run(provider: Provider, document: str, question: str,
        config: PipelineConfig | None = None) -> RunTrace:
    """Process `document` chunk by chunk and answer `question` from the cache."""
    cfg = config or PipelineConfig()
    cfg.validate()
    layer_index = provider.resolve_layer(cfg.layer)

    question_tokens = provider.encode(question)
    if not question_tokens:
        raise ConfigurationError("question encodes to zero tokens")
    sentences = segment_sentences(document, provider)
    chunks = build_chunks(sentences, cfg.chunk_size)
    document_tokens = sum(s.token_len for s in sentences)

    trace = RunTrace(
        provider_name=provider.name, config=cfg.as_dict(), layer_index=layer_index,
        document_tokens=document_tokens, question_token_count=len(question_tokens),
        chunk_count=len(chunks))

    if cfg.cache_mode == "kv_state":
        _run_kv_state(provider, chunks, question_tokens, cfg, trace)
    else:
        _run_token_ids(provider, chunks, question_tokens, cfg, trace)

    trace.forward_passes = len(chunks) + 1
    trace.fed_tokens_total += trace.fed_tokens_final
    trace.max_merged_tokens = max(trace.max_merged_tokens, trace.fed_tokens_final)
    if document_tokens > 0:
        trace.fed_token_ratio = trace.fed_tokens_final / document_tokens
    return trace


def _run_token_ids(provider: Provider, chunks: list[Chunk],
                   question_tokens: list[int], cfg: PipelineConfig,
                   trace: RunTrace) -> None:
    cache = CacheState.empty()
    for chunk in chunks:
        merged = merge(cache, chunk, question_tokens)
        _check_window(provider, len(merged.tokens), f"iteration {chunk.index}",
                      cache.token_total, chunk.token_count, len(question_tokens))
        tensor = provider.get_attention(list(merged.tokens), cfg.layer,
                                        merged.question_range)
        scores = _score_context(aggregate_heads(tensor), merged.context_len,
                                cfg.phrase_token_num)
        retained = _pick_sentences(scores, cfg.top_k, merged)
        before = cache.token_total
        cache = update(cache, retained)
        trace.iterations.append(IterationRecord(
            index=chunk.index, chunk_tokens=chunk.token_count,
            cache_tokens_before=before, fed_tokens=len(merged.tokens),
            retained_sentence_ids=cache.ids, cache_tokens_after=cache.token_total))
        trace.fed_tokens_total += len(merged.tokens)
        trace.max_merged_tokens = max(trace.max_merged_tokens, len(merged.tokens))

    trace.final_cache_ids = cache.ids
    trace.final_cache_tokens = cache.token_total
    text, out_tokens, fed = answer_from_cache(provider, cache, question_tokens,
                                              cfg.max_new_tokens)
    trace.answer_text = text
    trace.answer_token_ids = out_tokens
    trace.fed_tokens_final = fed


def _run_kv_state(provider: Provider, chunks: list[Chunk],
                  question_tokens: list[int], cfg: PipelineConfig,
                  trace: RunTrace) -> None:
    """Variant that retains the provider's past key/value rows instead of
    re-feeding retained token ids as text on every step."""
    if not provider.supports_state_sessions():
        raise UnsupportedModeError(
            f"provider {provider.name!r} has no key/value state sessions; "
            "use cache_mode='token_ids'")
    layer_index = provider.resolve_layer(cfg.layer)
    session = provider.begin_state_session()

    # sentence id owning each live state row (-1 marks question tokens)
    row_sentences: list[int] = []
    id_to_sentence: dict[int, Sentence] = {}
    cache_ids: tuple[int, ...] = ()

    for chunk in chunks:
        for s in chunk.sentences:
            id_to_sentence[s.id] = s
        fresh: list[int] = list(chunk.tokens()) + list(question_tokens)
        fresh_rows = [s.id for s in chunk.sentences for _ in range(s.token_len)]
        fresh_rows += [-1] * len(question_tokens)
        total = session.size + len(fresh)
        _check_window(provider, total, f"iteration {chunk.index}",
                      session.size, chunk.token_count, len(question_tokens))
        tensor = session.step(fresh, len(question_tokens), layer_index)
        row_sentences = row_sentences + fresh_rows
        agg = aggregate_heads(tensor)

        context_len = total - len(question_tokens)
        features = phrase_importance(np.ascontiguousarray(agg[:, :context_len]),
                                     cfg.phrase_token_num)
        scores = token_importance(features)
        before = session.size - len(fresh)
        if scores.size == 0 or float(scores.max()) <= 0.0:
            selected_ids: list[int] = []
        else:
            positions = select_top_k(scores, cfg.top_k)
            owners = np.asarray(row_sentences[:context_len], dtype=np.int64)
            selected_ids = sorted(int(i) for i in np.unique(owners[positions]) if i >= 0)

        selected_set = set(selected_ids)
        keep = [p for p, sid in enumerate(row_sentences) if sid in selected_set]
        session.retain(keep)
        row_sentences = [row_sentences[p] for p in keep]
        cache_ids = tuple(selected_ids)

        cache_after = len(keep)
        trace.iterations.append(IterationRecord(
            index=chunk.index, chunk_tokens=chunk.token_count,
            cache_tokens_before=before, fed_tokens=len(fresh),
            retained_sentence_ids=cache_ids, cache_tokens_after=cache_after))
        trace.fed_tokens_total += len(fresh)
        trace.max_merged_tokens = max(trace.max_merged_tokens, total)

    trace.final_cache_ids = cache_ids
    trace.final_cache_tokens = session.size
    out = session.generate(list(question_tokens), cfg.max_new_tokens,
                           getattr(provider, "eos_id", None))
    trace.answer_text = provider.decode(out)
    trace.answer_token_ids = tuple(int(t) for t in out)
    # the answering pass sees the retained state plus the question prompt
    trace.fed_tokens_final = session.size + len(question_tokens)
