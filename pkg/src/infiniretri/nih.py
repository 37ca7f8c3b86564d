"""Needle-in-a-haystack harness.

Synthesizes filler documents of controlled token length, drops a needle
sentence at a controlled depth, runs the retrieval pipeline over a
length x depth grid, and scores both cache recall (did the needle sentence
survive into the final cache?) and answer overlap.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _svg
from .errors import ConfigurationError
from .pipeline import PipelineConfig, run
from .providers import Provider
from .textseg import segment_sentences
from .tokenizer import ByteTokenizer

_FILLER_WORDS = (
    "the", "harbor", "lights", "turned", "amber", "before", "dawn", "crews",
    "hauled", "rope", "across", "wet", "stone", "while", "gulls", "argued",
    "over", "scraps", "near", "old", "crane", "traders", "counted", "crates",
    "of", "salt", "and", "dried", "fish", "tide", "tables", "hung", "beside",
    "door", "every", "captain", "checked", "them", "twice", "wind", "shifted",
    "slowly", "toward", "open", "water", "carrying", "smell", "tar", "morning",
)


def filler_sentences(rng: np.random.Generator, count: int) -> list[str]:
    """Deterministic husk sentences: 6-12 lowercase words, capitalized, period."""
    out = []
    for _ in range(count):
        n = int(rng.integers(6, 13))
        words = [_FILLER_WORDS[int(i)] for i in rng.integers(0, len(_FILLER_WORDS), n)]
        words[0] = words[0].capitalize()
        out.append(" ".join(words) + ".")
    return out


@dataclass(frozen=True)
class HaystackSpec:
    """Recipe for one synthetic document with a planted needle."""

    target_length: int            # approximate total tokens
    needle: str                   # one full sentence, inserted verbatim
    depth_percent: float          # 0 = first sentence, 100 = last
    question: str
    expected_answer: str
    filler_seed: int = 0

    def __post_init__(self) -> None:
        if self.target_length < 1:
            raise ConfigurationError(f"target_length must be >= 1, got {self.target_length}")
        if not 0.0 <= self.depth_percent <= 100.0:
            raise ConfigurationError(
                f"depth_percent must be in [0, 100], got {self.depth_percent}")
        if not self.needle.strip():
            raise ConfigurationError("needle must be non-empty")


def build_haystack(spec: HaystackSpec, tokenizer=None) -> tuple[str, int]:
    """Compose the document and return it with the needle's sentence id.

    Filler keeps being generated until the token budget is met, then the
    needle goes into the sentence boundary whose cumulative token count is
    nearest ``depth_percent`` of the filler total (earliest boundary wins a
    tie). The returned id is verified against a re-segmentation, so it is
    ground truth by construction.
    """
    tok = tokenizer or ByteTokenizer()
    needle_sents = segment_sentences(spec.needle.strip(), tok)
    if len(needle_sents) != 1:
        raise ConfigurationError(
            f"needle must segment to exactly one sentence, got {len(needle_sents)}")
    needle_tokens = needle_sents[0].token_len

    if spec.target_length < needle_tokens + 2:
        raise ConfigurationError(
            f"target_length {spec.target_length} cannot fit the needle "
            f"({needle_tokens} tokens) plus filler")

    rng = np.random.default_rng([spec.filler_seed, spec.target_length,
                                 int(round(spec.depth_percent * 10))])
    filler: list[str] = []
    counts: list[int] = []
    total = 0
    budget = spec.target_length - needle_tokens
    while total < budget or len(filler) < 2:
        sent = filler_sentences(rng, 1)[0]
        n = len(tok.encode(sent)) + 1  # joined with a space in the document
        filler.append(sent)
        counts.append(n)
        total += n

    cumulative = np.concatenate([[0], np.cumsum(counts)])
    target = spec.depth_percent / 100.0 * cumulative[-1]
    insert_at = int(np.argmin(np.abs(cumulative - target)))  # earliest nearest boundary

    parts = filler[:insert_at] + [spec.needle.strip()] + filler[insert_at:]
    document = " ".join(parts)

    sentences = segment_sentences(document, tok)
    wanted = needle_sents[0].text.strip()
    needle_id = next((s.id for s in sentences if s.text.strip() == wanted), -1)
    if needle_id < 0:
        raise ConfigurationError(
            "needle text was not recoverable as a sentence after composition")
    return document, needle_id


def answer_overlap(answer: str, expected: str) -> float:
    """Normalized match score in [0, 1]: 1.0 when the expected text appears
    verbatim (case/whitespace-folded), otherwise the fraction of expected
    words present in the answer."""
    def norm(s: str) -> str:
        return " ".join(s.casefold().split())

    a, e = norm(answer), norm(expected)
    if not e:
        return 1.0 if not a else 0.0
    if e in a:
        return 1.0
    a_words = set(a.split())
    e_words = e.split()
    if not e_words:
        return 0.0
    return sum(1 for w in e_words if w in a_words) / len(e_words)


@dataclass
class NihCell:
    length: int
    depth: float
    recall_hit: bool = False
    answer_match: float = 0.0
    needle_sentence_id: int = -1
    document_tokens: int = 0
    chunk_count: int = 0
    forward_passes: int = 0
    final_cache_tokens: int = 0
    max_merged_tokens: int = 0
    fed_token_ratio: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "length": self.length, "depth": self.depth,
            "recall_hit": self.recall_hit, "answer_match": self.answer_match,
            "needle_sentence_id": self.needle_sentence_id,
            "document_tokens": self.document_tokens,
            "chunk_count": self.chunk_count, "forward_passes": self.forward_passes,
            "final_cache_tokens": self.final_cache_tokens,
            "max_merged_tokens": self.max_merged_tokens,
            "fed_token_ratio": self.fed_token_ratio, "error": self.error,
        }


@dataclass
class NihGrid:
    lengths: tuple[int, ...]
    depths: tuple[float, ...]
    cells: list[NihCell] = field(default_factory=list)  # row-major: length, then depth
    config: dict = field(default_factory=dict)
    provider_name: str = ""

    def cell(self, length: int, depth: float) -> NihCell:
        i = self.lengths.index(length) * len(self.depths) + self.depths.index(depth)
        return self.cells[i]

    @property
    def recall_rate(self) -> float:
        if not self.cells:
            return 0.0
        return sum(1 for c in self.cells if c.recall_hit) / len(self.cells)

    def to_dict(self) -> dict:
        return {
            "lengths": list(self.lengths),
            "depths": list(self.depths),
            "provider": self.provider_name,
            "config": self.config,
            "recall_rate": self.recall_rate,
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run_grid(lengths: Sequence[int], depths: Sequence[float],
             provider_factory: Callable[[], Provider],
             *,
             needle: str,
             question: str,
             expected_answer: str,
             config: PipelineConfig | None = None,
             filler_seed: int = 0,
             jobs: int = 1) -> NihGrid:
    """One pipeline run per (length, depth) cell, each with its own provider
    session. Cell failures are recorded in the cell; the grid always completes.
    """
    if not lengths or not depths:
        raise ConfigurationError("grid needs at least one length and one depth")
    lens = tuple(sorted(set(int(x) for x in lengths)))
    deps = tuple(sorted(set(float(x) for x in depths)))
    cfg = config or PipelineConfig()
    cfg.validate()

    grid = NihGrid(lengths=lens, depths=deps, config=cfg.as_dict())
    probe = provider_factory()
    try:
        grid.provider_name = probe.name
    finally:
        probe.close()
    tasks = [(length, depth) for length in lens for depth in deps]

    def one(task: tuple[int, float]) -> NihCell:
        length, depth = task
        cell = NihCell(length=length, depth=depth)
        provider = None
        try:
            provider = provider_factory()
            spec = HaystackSpec(target_length=length, needle=needle,
                                depth_percent=depth, question=question,
                                expected_answer=expected_answer,
                                filler_seed=filler_seed)
            document, needle_id = build_haystack(spec, provider)
            cell.needle_sentence_id = needle_id
            trace = run(provider, document, question, cfg)
            cell.recall_hit = needle_id in trace.final_cache_ids
            cell.answer_match = answer_overlap(trace.answer_text, expected_answer)
            cell.document_tokens = trace.document_tokens
            cell.chunk_count = trace.chunk_count
            cell.forward_passes = trace.forward_passes
            cell.final_cache_tokens = trace.final_cache_tokens
            cell.max_merged_tokens = trace.max_merged_tokens
            cell.fed_token_ratio = trace.fed_token_ratio
        except Exception as exc:
            cell.error = f"{type(exc).__name__}: {exc}"
        finally:
            if provider is not None:
                provider.close()
        return cell

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            grid.cells = list(pool.map(one, tasks))
    else:
        grid.cells = [one(t) for t in tasks]
    return grid


def emit_heatmap(grid: NihGrid, path: str) -> dict[str, str]:
    """Write the grid as CSV (machine) and SVG (human, green-to-red on
    answer_match). `path` may name either file; the sibling gets the twin
    extension."""
    if len(grid.cells) != len(grid.lengths) * len(grid.depths):
        raise ValueError(
            f"grid has {len(grid.cells)} cells, expected "
            f"{len(grid.lengths) * len(grid.depths)}")
    if path.endswith(".csv"):
        csv_path, svg_path = path, path[:-4] + ".svg"
    elif path.endswith(".svg"):
        csv_path, svg_path = path[:-4] + ".csv", path
    else:
        csv_path, svg_path = path + ".csv", path + ".svg"

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["length", "depth", "recall_hit", "answer_match", "error"])
        for cell in grid.cells:
            writer.writerow([cell.length, f"{cell.depth:g}", int(cell.recall_hit),
                             f"{cell.answer_match:.6f}", cell.error or ""])

    values = np.full((len(grid.lengths), len(grid.depths)), np.nan)
    tips: list[list[str]] = []
    for i, length in enumerate(grid.lengths):
        row_tips = []
        for j, depth in enumerate(grid.depths):
            cell = grid.cells[i * len(grid.depths) + j]
            if cell.error is None:
                values[i, j] = cell.answer_match
            row_tips.append(
                f"len={length} depth={depth:g} recall={int(cell.recall_hit)} "
                f"match={cell.answer_match:.3f}"
                + (f" error={cell.error}" if cell.error else ""))
        tips.append(row_tips)
    svg = _svg.render_heatmap(
        values, [str(x) for x in grid.lengths],
        [f"{d:g}" for d in grid.depths], title="needle recall grid",
        ramp=_svg.ramp_green_red, show_values=True, tooltips=tips)
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    return {"csv": csv_path, "svg": svg_path}


@dataclass
class ModeComparison:
    """Side-by-side recall of the two cache carriers over the same documents."""

    doc_count: int
    recall: dict[str, float] = field(default_factory=dict)
    per_doc: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"doc_count": self.doc_count, "recall": self.recall, "per_doc": self.per_doc},
            sort_keys=True, indent=2) + "\n"


def compare_cache_modes(provider_factory: Callable[[], Provider],
                        *,
                        doc_count: int = 20,
                        config: PipelineConfig | None = None,
                        filler_seed: int = 7) -> ModeComparison:
    """Run every synthetic QA doc under both cache carriers and report recall
    per mode. Both modes must complete; the numbers themselves are reported,
    not judged."""
    if doc_count < 1:
        raise ConfigurationError(f"doc_count must be >= 1, got {doc_count}")
    base = config or PipelineConfig(chunk_size=512, top_k=64, phrase_token_num=5,
                                    max_new_tokens=8)
    base.validate()

    needle = "The vault code is seven nine two four."
    question = "What is the vault code?"
    result = ModeComparison(doc_count=doc_count)
    hits = {"token_ids": 0, "kv_state": 0}
    for d in range(doc_count):
        length = 1200 + 137 * d
        depth = (d * 37) % 101
        spec = HaystackSpec(target_length=length, needle=needle,
                            depth_percent=float(depth), question=question,
                            expected_answer=needle, filler_seed=filler_seed + d)
        entry: dict = {"doc": d, "target_length": length, "depth": depth}
        for mode in ("token_ids", "kv_state"):
            provider = provider_factory()
            try:
                document, needle_id = build_haystack(spec, provider)
                cfg = PipelineConfig(
                    chunk_size=base.chunk_size, top_k=base.top_k,
                    phrase_token_num=base.phrase_token_num, layer=base.layer,
                    max_new_tokens=base.max_new_tokens, cache_mode=mode)
                trace = run(provider, document, question, cfg)
                hit = needle_id in trace.final_cache_ids
                hits[mode] += int(hit)
                entry[mode] = {"recall_hit": hit,
                               "cache_tokens": trace.final_cache_tokens}
            finally:
                provider.close()
        result.per_doc.append(entry)
    result.recall = {mode: hits[mode] / doc_count for mode in hits}
    return result
