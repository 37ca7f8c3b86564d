"""Sentence segmentation and greedy chunk packing.

Sentences are the minimal units the cache stores; chunks are the units the
sliding window iterates over. Both partitions are lossless: flattening the
chunks token-by-token reproduces the tokenized document exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigurationError
from .tokenizer import Tokenizer

# Terminators that close a sentence, each attached to the text before it.
# Newlines are special-cased: a run of consecutive newlines is one terminator.
_TERMINATORS = frozenset(".!?。！？")


@dataclass(frozen=True)
class Sentence:
    """A contiguous span of the source document with a stable identity.

    ``id`` increases monotonically within a document; ``char_start`` and
    ``token_start`` are offsets into the document's character and token
    streams respectively.
    """

    id: int
    text: str
    tokens: tuple[int, ...]
    char_start: int
    token_start: int

    @property
    def token_len(self) -> int:
        return len(self.tokens)

    @property
    def token_end(self) -> int:
        return self.token_start + len(self.tokens)


@dataclass(frozen=True)
class Chunk:
    """An ordered run of sentences packed up to a token budget."""

    index: int
    sentences: tuple[Sentence, ...]

    @property
    def token_count(self) -> int:
        return sum(s.token_len for s in self.sentences)

    def tokens(self) -> list[int]:
        out: list[int] = []
        for s in self.sentences:
            out.extend(s.tokens)
        return out


def segment_sentences(text: str, tokenizer: Tokenizer) -> list[Sentence]:
    """Split ``text`` into sentences; single pass, no regex.

    A sentence ends right after a terminator character or after a run of
    newlines. A trailing fragment without a terminator becomes a final
    sentence. Empty input yields an empty list.
    """
    sentences: list[Sentence] = []
    n = len(text)
    start = 0
    token_start = 0

    def close(end: int) -> None:
        nonlocal start, token_start
        piece = text[start:end]
        tokens = tuple(tokenizer.encode(piece))
        sentences.append(Sentence(len(sentences), piece, tokens, start, token_start))
        token_start += len(tokens)
        start = end

    i = 0
    while i < n:
        if text[i] == "\n" or text[i] in _TERMINATORS:
            # the whole terminator run (e.g. "?!" or ".\n\n") stays attached
            j = i + 1
            while j < n and (text[j] == "\n" or text[j] in _TERMINATORS):
                j += 1
            close(j)
            i = j
        else:
            i += 1
    if start < n:
        close(n)
    return sentences


def build_chunks(sentences: Sequence[Sentence], chunk_size: int) -> list[Chunk]:
    """Greedy first-fit packing of sentences into chunks of ~``chunk_size`` tokens.

    A sentence that would overflow the current chunk starts a new one; a
    single sentence longer than ``chunk_size`` becomes its own oversized
    chunk. Every input sentence appears exactly once, in order.
    """
    if chunk_size < 1:
        raise ConfigurationError(f"chunk_size must be >= 1, got {chunk_size}")
    chunks: list[Chunk] = []
    current: list[Sentence] = []
    count = 0
    for s in sentences:
        if current and count + s.token_len > chunk_size:
            chunks.append(Chunk(len(chunks), tuple(current)))
            current, count = [], 0
        current.append(s)
        count += s.token_len
    if current:
        chunks.append(Chunk(len(chunks), tuple(current)))
    return chunks
