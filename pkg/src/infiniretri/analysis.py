"""Attention observation tools: heatmap export and the per-layer accuracy sweep.

The sweep answers "which layer's attention is best at pointing back to the
answer?" by running the retrieval scoring on one layer at a time over a set
of QA samples that each fit a single provider window.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _svg
from .attention import aggregate_heads
from .cache import CacheState, merge
from .errors import ConfigurationError
from .providers import Provider
from .retrieval import expand_to_sentences, phrase_importance, select_top_k, token_importance
from .textseg import Chunk, segment_sentences


def export_attention_heatmap(matrix: np.ndarray,
                             query_labels: Sequence[str],
                             key_labels: Sequence[str],
                             *,
                             svg_path: str | None = None,
                             csv_path: str | None = None,
                             title: str = "") -> dict[str, str]:
    """Write an aggregated attention matrix as an SVG heatmap and a raw CSV.

    The SVG color scale is normalized by this matrix's own maximum, so layers
    with very different magnitudes stay comparable by pattern. The CSV keeps
    the raw values. Returns the paths written keyed by kind.
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {mat.shape}")
    if len(query_labels) != mat.shape[0] or len(key_labels) != mat.shape[1]:
        raise ValueError(
            f"labels ({len(query_labels)} query, {len(key_labels)} key) do not match "
            f"matrix shape {mat.shape}")

    written: dict[str, str] = {}
    if svg_path is not None:
        peak = float(mat.max()) if mat.size else 0.0
        scaled = mat / peak if peak > 0 else np.zeros_like(mat)
        svg = _svg.render_heatmap(
            scaled, list(query_labels), list(key_labels), title=title,
            ramp=_svg.ramp_white_blue, cell_w=22, cell_h=18,
            tooltips=[[f"q={q!r} k={k!r} a={mat[i, j]:.6g}"
                       for j, k in enumerate(key_labels)]
                      for i, q in enumerate(query_labels)])
        with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
        written["svg"] = svg_path
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["query"] + [str(k) for k in key_labels])
            for i, q in enumerate(query_labels):
                writer.writerow([str(q)] + [f"{v:.9e}" for v in mat[i]])
        written["csv"] = csv_path
    return written


def read_heatmap_csv(path: str) -> np.ndarray:
    """Parse back the value block of a heatmap CSV (labels dropped)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        return np.zeros((0, 0))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)


@dataclass(frozen=True)
class QaSample:
    """One sweep sample: a short context, a question, and where the answer
    lives inside the context's flattened token sequence."""

    context: str
    question: str
    answer_start: int
    answer_len: int

    @property
    def answer_range(self) -> range:
        return range(self.answer_start, self.answer_start + self.answer_len)


@dataclass(frozen=True)
class LayerSweepResult:
    accuracies: tuple[float, ...]     # one entry per layer, [] when no usable samples
    hits: tuple[int, ...]
    sample_count: int                 # samples actually scored (per layer)
    skipped: int                      # samples dropped for exceeding the window

    @property
    def best_layer(self) -> int:
        if not self.accuracies:
            raise ValueError("sweep scored no samples")
        return int(np.argmax(self.accuracies))


def layer_sweep(samples: Sequence[QaSample], provider: Provider,
                *, top_k: int = 300, phrase_token_num: int = 15) -> LayerSweepResult:
    """Score answer retrieval per layer: a sample counts as a hit when any
    selected sentence overlaps its answer token range."""
    if top_k < 1 or phrase_token_num < 1:
        raise ConfigurationError(
            f"top_k and phrase_token_num must be >= 1, got {top_k}, {phrase_token_num}")

    usable = []
    skipped = 0
    for sample in samples:
        sentences = segment_sentences(sample.context, provider)
        question_tokens = provider.encode(sample.question)
        if not sentences or not question_tokens:
            raise ConfigurationError("sweep sample with empty context or question")
        context_len = sum(s.token_len for s in sentences)
        if sample.answer_range.stop > context_len or sample.answer_start < 0:
            raise ConfigurationError(
                f"answer range {sample.answer_range} outside context of {context_len} tokens")
        if context_len + len(question_tokens) > provider.max_window:
            warnings.warn(
                f"sweep sample of {context_len} context tokens exceeds the provider "
                f"window {provider.max_window}; skipping", RuntimeWarning)
            skipped += 1
            continue
        merged = merge(CacheState.empty(), Chunk(0, tuple(sentences)), question_tokens)
        usable.append((sample, merged))

    if not usable:
        return LayerSweepResult((), (), 0, skipped)

    hits = []
    for layer in range(provider.layers):
        layer_hits = 0
        for sample, merged in usable:
            tensor = provider.get_attention(list(merged.tokens), layer,
                                            merged.question_range)
            agg = aggregate_heads(tensor)
            context = np.ascontiguousarray(agg[:, :merged.context_len])
            scores = token_importance(phrase_importance(context, phrase_token_num))
            if scores.size == 0 or float(scores.max()) <= 0.0:
                continue
            selected = expand_to_sentences(select_top_k(scores, top_k), merged)
            span = sample.answer_range
            if any(s.token_start < span.stop and span.start < s.token_end
                   for s in selected):
                layer_hits += 1
        hits.append(layer_hits)

    n = len(usable)
    return LayerSweepResult(tuple(h / n for h in hits), tuple(hits), n, skipped)
