"""Cross-window memory: sentence token-IDs carried between iterations.

The cache stores whole sentences (id + token IDs + text) outside the model.
Before each inference the cache is merged with the current chunk and the
question into one token sequence; after retrieval it is replaced wholesale by
the sentences that survived selection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .textseg import Chunk, Sentence


@dataclass(frozen=True)
class CacheState:
    """Ordered, duplicate-free sentence store; ``generation`` counts updates."""

    sentences: tuple[Sentence, ...] = ()
    generation: int = 0

    @property
    def token_total(self) -> int:
        return sum(s.token_len for s in self.sentences)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(s.id for s in self.sentences)

    @staticmethod
    def empty() -> "CacheState":
        return CacheState()


@dataclass(frozen=True)
class MergedInput:
    """Cache tokens ++ chunk tokens ++ question tokens, with provenance.

    ``sentence_ids[p]`` is the covering sentence for every context position p;
    the question occupies the final contiguous segment and belongs to no
    sentence.
    """

    tokens: tuple[int, ...]
    sentence_ids: np.ndarray
    sentences: dict[int, Sentence]
    cache_len: int
    context_len: int
    question_range: range = field(compare=False)

    def provenance(self, position: int) -> str:
        if position < 0 or position >= len(self.tokens):
            raise IndexError(f"position {position} outside merged input of {len(self.tokens)}")
        if position < self.cache_len:
            return "cache"
        if position < self.context_len:
            return "chunk"
        return "question"


def merge(cache: CacheState, chunk: Chunk | None, question_tokens: Sequence[int]) -> MergedInput:
    """Build the per-iteration model input. ``chunk`` may be None for the final
    answer pass, which runs on cache + question alone."""
    if not question_tokens:
        raise ValueError("question_tokens must be non-empty")
    chunk_sentences: tuple[Sentence, ...] = chunk.sentences if chunk is not None else ()
    ordered = list(cache.sentences) + list(chunk_sentences)
    ids = [s.id for s in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("cache and chunk share sentence ids; chunks must advance past the cache")

    tokens: list[int] = []
    sid_per_token: list[int] = []
    for s in ordered:
        tokens.extend(s.tokens)
        sid_per_token.extend([s.id] * s.token_len)
    context_len = len(tokens)
    cache_len = cache.token_total
    tokens.extend(question_tokens)
    return MergedInput(
        tokens=tuple(tokens),
        sentence_ids=np.asarray(sid_per_token, dtype=np.int64),
        sentences={s.id: s for s in ordered},
        cache_len=cache_len,
        context_len=context_len,
        question_range=range(context_len, len(tokens)),
    )


def update(cache: CacheState, retained: Sequence[Sentence]) -> CacheState:
    """Replace the cache with ``retained``: full replacement, re-sorted by
    sentence id, generation incremented. Sentences not re-selected are gone."""
    ids = [s.id for s in retained]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate sentence ids in retained set: {sorted(ids)}")
    ordered = tuple(sorted(retained, key=lambda s: s.id))
    return CacheState(sentences=ordered, generation=cache.generation + 1)


class SnapshotLine(NamedTuple):
    id: int
    tokens: tuple[int, ...]
    text: str


def snapshot(cache: CacheState) -> str:
    """Line-oriented dump, one sentence per line: id, token ids, text."""
    lines = []
    for s in cache.sentences:
        toks = " ".join(str(t) for t in s.tokens)
        lines.append(f"{s.id}\t{toks}\t{json.dumps(s.text, ensure_ascii=False)}")
    return "\n".join(lines) + ("\n" if lines else "")


def read_snapshot(text: str) -> list[SnapshotLine]:
    out: list[SnapshotLine] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        sid, toks, quoted = line.split("\t", 2)
        tokens = tuple(int(t) for t in toks.split()) if toks.strip() else ()
        out.append(SnapshotLine(int(sid), tokens, json.loads(quoted)))
    return out
