"""From an aggregated question-to-context attention matrix to retained sentences.

The chain is: ones-kernel 1D convolution along the key axis (phrase-level
features), column sum (per-token importance), top-k selection with
earlier-position tie-break, then expansion of selected token positions to
their covering sentences.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .cache import MergedInput
from .errors import ConfigurationError
from .textseg import Sentence


def phrase_importance(attn: np.ndarray, phrase_token_num: int) -> np.ndarray:
    """Moving-window sum of width ``phrase_token_num`` along the key axis.

    Windows are right-aligned and zero-padded past the right edge, so the
    output keeps the input's width: out[i, j] = sum(attn[i, j:j+k]).
    """
    if phrase_token_num < 1:
        raise ConfigurationError(f"phrase_token_num must be >= 1, got {phrase_token_num}")
    a = np.asarray(attn, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"attention matrix must be 2-D, got shape {a.shape}")
    k = phrase_token_num
    if k == 1:
        return a.copy()
    padded = np.pad(a, ((0, 0), (0, k - 1)))
    return sliding_window_view(padded, k, axis=1).sum(axis=-1)


def token_importance(features: np.ndarray) -> np.ndarray:
    """Per-column sum: each context token's score accumulated over all query rows."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError(f"feature matrix must be 2-D with >= 1 row, got shape {f.shape}")
    return f.sum(axis=0)


def select_top_k(scores: np.ndarray, top_k: int) -> np.ndarray:
    """Positions of the ``top_k`` highest scores, ties broken toward earlier
    positions. Returned ascending; all positions if ``top_k`` covers them."""
    if top_k < 1:
        raise ConfigurationError(f"top_k must be >= 1, got {top_k}")
    s = np.asarray(scores)
    if s.ndim != 1:
        raise ValueError(f"scores must be 1-D, got shape {s.shape}")
    if top_k >= s.size:
        return np.arange(s.size, dtype=np.int64)
    order = np.argsort(-s, kind="stable")  # stable keeps earlier index first on ties
    return np.sort(order[:top_k]).astype(np.int64)


def expand_to_sentences(positions: Sequence[int] | np.ndarray,
                        merged: MergedInput) -> tuple[Sentence, ...]:
    """Distinct sentences covering any selected context position, in id order."""
    idx = np.asarray(positions, dtype=np.int64)
    if idx.size == 0:
        return ()
    if idx.min() < 0 or idx.max() >= merged.context_len:
        raise ValueError(
            f"selected position outside context range [0, {merged.context_len}): "
            f"min {idx.min()}, max {idx.max()}")
    ids = np.unique(merged.sentence_ids[idx])
    return tuple(merged.sentences[int(i)] for i in ids)
