"""Built-in lossless tokenizer plus the minimal tokenizer contract."""

from __future__ import annotations

from typing import Protocol, Sequence


class Tokenizer(Protocol):
    """What the engine needs from any tokenizer: encode, decode, vocab size."""

    vocab_size: int

    def encode(self, text: str) -> list[int]: ...

    def decode(self, tokens: Sequence[int]) -> str: ...


class ByteTokenizer:
    """UTF-8 byte tokenizer: IDs 0..255 are raw bytes, 256 is end-of-text.

    Concatenative by construction (encode(a) + encode(b) == encode(a + b)),
    so sentence-level token offsets stay exact under concatenation.
    """

    EOS = 256

    def __init__(self) -> None:
        self.vocab_size = 257

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, tokens: Sequence[int]) -> str:
        # Generated sequences may contain EOS or invalid UTF-8 runs; drop the
        # former, replace the latter. encode() output always round-trips exactly.
        return bytes(t for t in tokens if t < 256).decode("utf-8", errors="replace")
