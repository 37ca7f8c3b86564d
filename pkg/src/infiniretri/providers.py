"""Attention providers: the contract plus the built-in implementations.

A provider owns tokenization, produces per-layer attention tensors for a
requested query range, and generates greedy continuations. The pipeline is
provider-agnostic; anything honoring this surface plugs in, including the
wire-protocol client in ``protocol``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .attention import AttentionTensor
from .errors import ConfigurationError, UnsupportedModeError, WindowExceededError
from .tokenizer import ByteTokenizer
from .toymodel import ToyModel, ToyModelSpec, ToyStateSession

LayerSpec = int | str  # an index, or "last"


class StateSession(Protocol):
    """Provider-side key/value state reused across steps (ablation mode)."""

    @property
    def size(self) -> int: ...

    def step(self, new_tokens: Sequence[int], query_len: int, layer: int) -> AttentionTensor: ...

    def retain(self, positions: Sequence[int]) -> None: ...

    def generate(self, prompt_tokens: Sequence[int], max_new_tokens: int,
                 eos: int | None = None) -> list[int]: ...


class Provider:
    """Base class: tokenization plus attention/generation over token IDs."""

    name = "base"
    layers: int
    max_window: int

    def encode(self, text: str) -> list[int]:
        raise NotImplementedError

    def decode(self, tokens: Sequence[int]) -> str:
        raise NotImplementedError

    def resolve_layer(self, layer: LayerSpec) -> int:
        if layer == "last":
            return self.layers - 1
        if not isinstance(layer, int):
            raise ConfigurationError(f"layer must be an int or 'last', got {layer!r}")
        if not 0 <= layer < self.layers:
            raise ConfigurationError(f"layer {layer} outside [0, {self.layers})")
        return layer

    def get_attention(self, tokens: Sequence[int], layer: LayerSpec,
                      query_range: range) -> AttentionTensor:
        raise NotImplementedError

    def generate(self, tokens: Sequence[int], max_new_tokens: int) -> list[int]:
        raise NotImplementedError

    def supports_state_sessions(self) -> bool:
        return False

    def begin_state_session(self) -> StateSession:
        raise UnsupportedModeError(f"provider {self.name!r} cannot reuse internal past-state")

    def close(self) -> None:
        pass

    def __enter__(self) -> "Provider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _check_window(n: int, max_window: int) -> None:
    if n > max_window:
        raise WindowExceededError(f"input of {n} tokens exceeds provider window {max_window}")


def _check_query_range(query_range: range, n: int) -> None:
    if len(query_range) < 1 or query_range.start < 0 or query_range.stop > n:
        raise ValueError(f"query_range {query_range} outside input of length {n}")


class ToyProvider(Provider):
    """The built-in deterministic decoder behind the provider contract."""

    name = "toy"

    def __init__(self, spec: ToyModelSpec | None = None) -> None:
        self.spec = spec or ToyModelSpec()
        self.tokenizer = ByteTokenizer()
        if self.tokenizer.vocab_size > self.spec.vocab_size:
            raise ConfigurationError(
                f"toy vocab_size {self.spec.vocab_size} smaller than tokenizer's "
                f"{self.tokenizer.vocab_size}")
        self.model = ToyModel(self.spec)
        self.layers = self.spec.layers
        self.max_window = self.spec.max_window
        self.vocab_size = self.spec.vocab_size
        self.eos_id = ByteTokenizer.EOS

    def encode(self, text: str) -> list[int]:
        return self.tokenizer.encode(text)

    def decode(self, tokens: Sequence[int]) -> str:
        return self.tokenizer.decode(tokens)

    def get_attention(self, tokens: Sequence[int], layer: LayerSpec,
                      query_range: range) -> AttentionTensor:
        li = self.resolve_layer(layer)
        return self.model.attention(tokens, [li], query_range)[0]

    def generate(self, tokens: Sequence[int], max_new_tokens: int) -> list[int]:
        return self.model.generate(tokens, max_new_tokens, eos=ByteTokenizer.EOS)

    def supports_state_sessions(self) -> bool:
        return True

    def begin_state_session(self) -> ToyStateSession:
        return self.model.new_session()


@dataclass(frozen=True)
class PlantedOracleSpec:
    """Synthetic attention with known ground truth.

    ``target_spans`` maps token-ID patterns to a mass weight; every occurrence
    of a pattern in the input receives that much extra attention from every
    query row, scaled by the current layer's ``layer_profile`` multiplier.
    Everything else gets seeded background noise below ``background_mass``.
    """

    target_spans: tuple[tuple[tuple[int, ...], float], ...] = ()
    background_mass: float = 0.01
    layer_profile: tuple[float, ...] = (1.0,)
    heads: int = 2
    noise_seed: int = 0
    vocab_size: int = 257
    max_window: int = 1 << 22

    def __post_init__(self) -> None:
        if self.background_mass <= 0:
            raise ConfigurationError("background_mass must be positive")
        if len(self.layer_profile) < 1 or any(p < 0 for p in self.layer_profile):
            raise ConfigurationError("layer_profile must be non-empty and non-negative")
        if self.heads < 1:
            raise ConfigurationError("heads must be >= 1")
        for pattern, mass in self.target_spans:
            if not pattern:
                raise ConfigurationError("planted spans must have at least one token")
            if mass <= 0:
                raise ConfigurationError(f"planted mass must be positive, got {mass}")

    @staticmethod
    def plant(spans: Mapping[Sequence[int], float], **kwargs) -> "PlantedOracleSpec":
        packed = tuple((tuple(int(t) for t in pat), float(mass)) for pat, mass in spans.items())
        return PlantedOracleSpec(target_spans=packed, **kwargs)


def _pattern_columns(tokens: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """All column indices covered by any occurrence of ``pattern`` in ``tokens``."""
    if pattern.size == 0 or pattern.size > tokens.size:
        return np.empty(0, dtype=np.int64)
    windows = sliding_window_view(tokens, pattern.size)
    starts = np.nonzero((windows == pattern).all(axis=1))[0]
    if starts.size == 0:
        return np.empty(0, dtype=np.int64)
    cols = (starts[:, None] + np.arange(pattern.size)[None, :]).ravel()
    return np.unique(cols)


class PlantedOracle(Provider):
    """Deterministic provider that concentrates attention on planted spans.

    Makes retrieval ground truth exact: wherever a planted pattern appears in
    the input, its positions carry the dominant attention mass. ``generate``
    echoes the first planted span found in the input.
    """

    name = "oracle"

    def __init__(self, spec: PlantedOracleSpec | None = None) -> None:
        self.spec = spec or PlantedOracleSpec()
        self.tokenizer = ByteTokenizer()
        self.layers = len(self.spec.layer_profile)
        self.max_window = self.spec.max_window
        self.vocab_size = self.spec.vocab_size

    def encode(self, text: str) -> list[int]:
        return self.tokenizer.encode(text)

    def decode(self, tokens: Sequence[int]) -> str:
        return self.tokenizer.decode(tokens)

    def _noise(self, layer: int, shape: tuple[int, ...], tokens: np.ndarray) -> np.ndarray:
        digest = zlib.crc32(tokens.astype(np.int64).tobytes())
        rng = np.random.default_rng([self.spec.noise_seed, layer, tokens.size, digest])
        return rng.uniform(1e-9, self.spec.background_mass, size=shape)

    def get_attention(self, tokens: Sequence[int], layer: LayerSpec,
                      query_range: range) -> AttentionTensor:
        arr = np.asarray(tokens, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("input must be a non-empty 1-D token sequence")
        _check_window(arr.size, self.max_window)
        _check_query_range(query_range, arr.size)
        li = self.resolve_layer(layer)
        gain = self.spec.layer_profile[li]
        n, m = len(query_range), arr.size

        weights = self._noise(li, (self.spec.heads, n, m), arr)
        for pattern, mass in self.spec.target_spans:
            cols = _pattern_columns(arr, np.asarray(pattern, dtype=np.int64))
            if cols.size:
                weights[:, :, cols] += mass * gain
        visible = np.arange(m)[None, :] <= (query_range.start + np.arange(n))[:, None]
        weights = np.where(visible[None, :, :], weights, 0.0)
        weights /= weights.sum(axis=2, keepdims=True)
        return AttentionTensor(li, weights, query_range, range(0, m))

    def generate(self, tokens: Sequence[int], max_new_tokens: int) -> list[int]:
        if max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {max_new_tokens}")
        arr = np.asarray(tokens, dtype=np.int64)
        _check_window(arr.size, self.max_window)
        for pattern, _ in self.spec.target_spans:
            if _pattern_columns(arr, np.asarray(pattern, dtype=np.int64)).size:
                return list(pattern)[:max_new_tokens]
        return []
