"""A small deterministic decoder transformer.

Exists so the whole retrieval pipeline can run end-to-end with zero external
model dependencies: seeded random weights, pre-norm blocks, causal
self-attention, greedy decoding. No training, no sampling, no claim of
linguistic quality; the only contracts are determinism and well-formed
attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .attention import AttentionTensor
from .errors import ConfigurationError, WindowExceededError

_NORM_EPS = 1e-6


@dataclass(frozen=True)
class ToyModelSpec:
    """Dimensions and seed; identical spec + seed gives bit-identical weights."""

    vocab_size: int = 257
    layers: int = 4
    heads: int = 2
    head_dim: int = 8
    hidden_dim: int = 16
    seed: int = 0
    max_window: int = 8192

    def __post_init__(self) -> None:
        for field in ("vocab_size", "layers", "heads", "head_dim", "hidden_dim", "max_window"):
            if getattr(self, field) < 1:
                raise ConfigurationError(f"{field} must be >= 1, got {getattr(self, field)}")


def _positional(positions: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal position features; works for arbitrary absolute positions."""
    half = (dim + 1) // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half) / half))
    angles = positions[:, None] * freqs[None, :]
    out = np.empty((positions.shape[0], 2 * half))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out[:, :dim]


def _rms_norm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + _NORM_EPS)


def _causal_softmax(logits: np.ndarray, past_len: int) -> np.ndarray:
    """Softmax over (H, n, past_len + n) logits; row i sees keys <= past_len + i."""
    n, total = logits.shape[1], logits.shape[2]
    visible = np.arange(total)[None, :] <= (past_len + np.arange(n))[:, None]
    masked = np.where(visible[None, :, :], logits, -np.inf)
    masked -= masked.max(axis=2, keepdims=True)
    weights = np.exp(masked)
    return weights / weights.sum(axis=2, keepdims=True)


class ToyModel:
    """Deterministic decoder: embeddings, L pre-norm attention+FFN blocks, unembed."""

    def __init__(self, spec: ToyModelSpec) -> None:
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        h, hd = spec.hidden_dim, spec.heads * spec.head_dim

        def mat(rows: int, cols: int) -> np.ndarray:
            return rng.uniform(-1.0, 1.0, size=(rows, cols)) / np.sqrt(rows)

        self.embed = rng.uniform(-1.0, 1.0, size=(spec.vocab_size, h))
        self.blocks = []
        for _ in range(spec.layers):
            self.blocks.append({
                "wq": mat(h, hd), "wk": mat(h, hd), "wv": mat(h, hd), "wo": mat(hd, h),
                "w1": mat(h, 2 * h), "w2": mat(2 * h, h),
            })
        self.unembed = mat(h, spec.vocab_size)

    # -- core forward ------------------------------------------------------

    def _check_tokens(self, tokens: Sequence[int]) -> np.ndarray:
        arr = np.asarray(tokens, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("input must be a non-empty 1-D token sequence")
        if arr.min() < 0 or arr.max() >= self.spec.vocab_size:
            raise ValueError(
                f"token id out of vocab: range [{arr.min()}, {arr.max()}] "
                f"vs vocab_size {self.spec.vocab_size}")
        return arr

    def _forward(self, tokens: np.ndarray, positions: np.ndarray,
                 past: list[tuple[np.ndarray, np.ndarray]] | None = None,
                 want_layers: Iterable[int] = ()) -> tuple[
                     dict[int, np.ndarray], list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """One pass over ``tokens`` given optional frozen per-layer past K/V.

        Returns (attention per wanted layer as (H, n, past+n), new per-layer
        K/V, final hidden states). Past K/V are never recomputed; that is the
        point of the state-reuse ablation mode.
        """
        spec = self.spec
        wanted = set(want_layers)
        past_len = 0 if past is None else past[0][0].shape[1]
        x = self.embed[tokens] + _positional(positions, spec.hidden_dim)
        attn_out: dict[int, np.ndarray] = {}
        new_kv: list[tuple[np.ndarray, np.ndarray]] = []
        n = tokens.shape[0]
        for li, blk in enumerate(self.blocks):
            hpre = _rms_norm(x)
            q = hpre @ blk["wq"]
            k = hpre @ blk["wk"]
            v = hpre @ blk["wv"]
            # (n, H*dh) -> (H, n, dh)
            def split(a: np.ndarray) -> np.ndarray:
                return a.reshape(n, spec.heads, spec.head_dim).transpose(1, 0, 2)
            qh, kh, vh = split(q), split(k), split(v)
            if past is not None:
                kh_all = np.concatenate([past[li][0], kh], axis=1)
                vh_all = np.concatenate([past[li][1], vh], axis=1)
            else:
                kh_all, vh_all = kh, vh
            new_kv.append((kh, vh))
            logits = qh @ kh_all.transpose(0, 2, 1) / np.sqrt(spec.head_dim)
            weights = _causal_softmax(logits, past_len)
            if li in wanted:
                attn_out[li] = weights
            ctx = weights @ vh_all                       # (H, n, dh)
            ctx = ctx.transpose(1, 0, 2).reshape(n, spec.heads * spec.head_dim)
            x = x + ctx @ blk["wo"]
            hff = _rms_norm(x)
            x = x + np.maximum(hff @ blk["w1"], 0.0) @ blk["w2"]
        return attn_out, new_kv, _rms_norm(x)

    # -- public surface ------------------------------------------------------

    def attention(self, tokens: Sequence[int], layers: Iterable[int],
                  query_range: range) -> list[AttentionTensor]:
        """Attention tensors for the requested layers, rows restricted to ``query_range``."""
        arr = self._check_tokens(tokens)
        n = arr.shape[0]
        if n > self.spec.max_window:
            raise WindowExceededError(f"input of {n} tokens exceeds window {self.spec.max_window}")
        if query_range.start < 0 or query_range.stop > n or len(query_range) < 1:
            raise ValueError(f"query_range {query_range} outside input of length {n}")
        layer_list = sorted(set(layers))
        for li in layer_list:
            if not 0 <= li < self.spec.layers:
                raise ConfigurationError(f"layer {li} outside [0, {self.spec.layers})")
        positions = np.arange(n)
        attn, _, _ = self._forward(arr, positions, want_layers=layer_list)
        return [
            AttentionTensor(li, attn[li][:, query_range.start:query_range.stop, :],
                            query_range, range(0, n))
            for li in layer_list
        ]

    def next_logits(self, tokens: Sequence[int]) -> np.ndarray:
        arr = self._check_tokens(tokens)
        if arr.shape[0] > self.spec.max_window:
            raise WindowExceededError(
                f"input of {arr.shape[0]} tokens exceeds window {self.spec.max_window}")
        _, _, hidden = self._forward(arr, np.arange(arr.shape[0]))
        return hidden[-1] @ self.unembed

    def generate(self, tokens: Sequence[int], max_new_tokens: int,
                 eos: int | None = None) -> list[int]:
        """Greedy decoding; stops at ``eos`` or the window edge."""
        if max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {max_new_tokens}")
        seq = list(self._check_tokens(tokens))
        if len(seq) > self.spec.max_window:
            raise WindowExceededError(
                f"prompt of {len(seq)} tokens exceeds window {self.spec.max_window}")
        out: list[int] = []
        while len(out) < max_new_tokens and len(seq) < self.spec.max_window:
            nxt = int(np.argmax(self.next_logits(seq)))
            out.append(nxt)
            seq.append(nxt)
            if eos is not None and nxt == eos:
                break
        return out

    def new_session(self) -> "ToyStateSession":
        return ToyStateSession(self)


class ToyStateSession:
    """Per-layer key/value state reused across steps instead of token IDs.

    Cached positions keep the key/value vectors computed in their original
    context; later steps attend to them as-is. This is the mechanical
    comparator for the token-ID cache: stale state versus re-read tokens.
    """

    def __init__(self, model: ToyModel) -> None:
        self.model = model
        spec = model.spec
        shape = (spec.heads, 0, spec.head_dim)
        self._kv: list[tuple[np.ndarray, np.ndarray]] = [
            (np.empty(shape), np.empty(shape)) for _ in range(spec.layers)
        ]
        self._next_position = 0

    @property
    def size(self) -> int:
        return int(self._kv[0][0].shape[1])

    def step(self, new_tokens: Sequence[int], query_len: int, layer: int) -> AttentionTensor:
        """Extend the state with ``new_tokens``; return layer attention for the
        trailing ``query_len`` rows over all (cached + new) columns."""
        arr = self.model._check_tokens(new_tokens)
        n = arr.shape[0]
        if not 1 <= query_len <= n:
            raise ValueError(f"query_len {query_len} outside new token count {n}")
        if self.size + n > self.model.spec.max_window:
            raise WindowExceededError(
                f"state {self.size} + new {n} tokens exceeds window {self.model.spec.max_window}")
        positions = self._next_position + np.arange(n)
        attn, new_kv, _ = self.model._forward(arr, positions, past=self._kv, want_layers=[layer])
        self._kv = [
            (np.concatenate([pk, nk], axis=1), np.concatenate([pv, nv], axis=1))
            for (pk, pv), (nk, nv) in zip(self._kv, new_kv)
        ]
        self._next_position += n
        total = self.size
        return AttentionTensor(layer, attn[layer][:, n - query_len:, :],
                               range(total - query_len, total), range(0, total))

    def retain(self, positions: Sequence[int]) -> None:
        """Keep only the given state slots (indices into the current state)."""
        idx = np.asarray(sorted(positions), dtype=np.int64)
        if idx.size and (idx[0] < 0 or idx[-1] >= self.size):
            raise ValueError(f"retain positions outside state of size {self.size}")
        self._kv = [(k[:, idx, :], v[:, idx, :]) for k, v in self._kv]

    def generate(self, prompt_tokens: Sequence[int], max_new_tokens: int,
                 eos: int | None = None) -> list[int]:
        """Greedy decoding conditioned on state + prompt; leaves the state untouched."""
        if max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {max_new_tokens}")
        kv = list(self._kv)
        next_pos = self._next_position
        pending = list(prompt_tokens)
        out: list[int] = []
        while True:
            arr = self.model._check_tokens(pending)
            if kv[0][0].shape[1] + arr.shape[0] > self.model.spec.max_window:
                break
            positions = next_pos + np.arange(arr.shape[0])
            _, new_kv, hidden = self.model._forward(arr, positions, past=kv)
            kv = [
                (np.concatenate([pk, nk], axis=1), np.concatenate([pv, nv], axis=1))
                for (pk, pv), (nk, nv) in zip(kv, new_kv)
            ]
            next_pos += arr.shape[0]
            nxt = int(np.argmax(hidden[-1] @ self.model.unembed))
            out.append(nxt)
            if len(out) >= max_new_tokens or (eos is not None and nxt == eos):
                break
            pending = [nxt]
        return out
