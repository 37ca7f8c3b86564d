"""Scaled-dot-product attention kernel and head aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AttentionTensor:
    """Per-head attention weights for one layer over a merged input.

    ``heads`` has shape (H, n, m): H head matrices of n query rows by m key
    columns. Rows are softmax-normalized over the causally visible prefix;
    entries at masked positions are exactly zero. ``query_positions`` and
    ``key_positions`` locate the rows/columns inside the merged input.
    """

    layer: int
    heads: np.ndarray
    query_positions: range
    key_positions: range

    @property
    def num_heads(self) -> int:
        return int(self.heads.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.heads.shape[1]), int(self.heads.shape[2])


def stack_heads(layer: int, matrices: list[np.ndarray], query_positions: range,
                key_positions: range) -> AttentionTensor:
    shapes = {m.shape for m in matrices}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent head shapes: {sorted(shapes)}")
    return AttentionTensor(layer, np.stack(matrices), query_positions, key_positions)


def attention_scores(queries: np.ndarray, keys: np.ndarray, causal_offset: int = 0) -> np.ndarray:
    """Row-wise softmax(Q K^T / sqrt(d)) with a causal mask, for one head.

    ``causal_offset`` is the absolute position of query row 0 relative to key
    column 0: row i may attend to columns j <= causal_offset + i. Masked
    entries are exactly zero; each row sums to one over its visible prefix.
    """
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2:
        raise ValueError(f"queries/keys must be 2-D, got shapes {q.shape} and {k.shape}")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"feature dim mismatch: queries {q.shape} vs keys {k.shape}")
    n, d = q.shape
    m = k.shape[0]
    visible = np.arange(m)[None, :] <= (np.arange(n)[:, None] + causal_offset)
    if not visible.any(axis=1).all():
        raise ValueError("causal_offset leaves at least one query row with no visible key")
    logits = (q @ k.T) / np.sqrt(d)
    logits = np.where(visible, logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)  # max-subtraction for stability
    weights = np.exp(logits)                     # exp(-inf) == 0 exactly
    return weights / weights.sum(axis=1, keepdims=True)


def aggregate_heads(tensor: AttentionTensor) -> np.ndarray:
    """Element-wise sum over heads; each output row sums to the head count."""
    if tensor.num_heads < 1:
        raise ValueError("tensor has no heads")
    return tensor.heads.sum(axis=0)
