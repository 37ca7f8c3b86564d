import csv

import numpy as np
import pytest

from infiniretri._svg import ramp_green_red
from infiniretri.errors import ConfigurationError
from infiniretri.nih import (HaystackSpec, answer_overlap, build_haystack,
                             compare_cache_modes, emit_heatmap, run_grid)
from infiniretri.pipeline import PipelineConfig
from infiniretri.providers import PlantedOracle, PlantedOracleSpec, ToyProvider
from infiniretri.textseg import segment_sentences
from infiniretri.tokenizer import ByteTokenizer
from infiniretri.toymodel import ToyModelSpec

TOK = ByteTokenizer()
NEEDLE = "The secret ingredient is toasted cardamom."
QUESTION = "What is the secret ingredient?"

FAST = PipelineConfig(chunk_size=256, top_k=40, phrase_token_num=5, max_new_tokens=64)


def oracle_factory():
    spec = PlantedOracleSpec.plant({tuple(TOK.encode(NEEDLE)): 0.8})
    return PlantedOracle(spec)


def _spec(length, depth, seed=0):
    return HaystackSpec(target_length=length, needle=NEEDLE, depth_percent=depth,
                        question=QUESTION, expected_answer=NEEDLE, filler_seed=seed)


# -- haystack construction ----------------------------------------------------


def test_depth_zero_puts_needle_first():
    doc, nid = build_haystack(_spec(800, 0))
    assert nid == 0
    assert segment_sentences(doc, TOK)[0].text.strip() == NEEDLE


def test_depth_hundred_puts_needle_last():
    doc, nid = build_haystack(_spec(800, 100))
    sentences = segment_sentences(doc, TOK)
    assert nid == sentences[-1].id
    assert sentences[-1].text.strip() == NEEDLE


def test_mid_depth_lands_near_token_midpoint():
    doc, nid = build_haystack(_spec(10_000, 50))
    sentences = segment_sentences(doc, TOK)
    needle_sentence = sentences[nid]
    total = sum(s.token_len for s in sentences)
    longest = max(s.token_len for s in sentences)
    # placement error is bounded by boundary quantization plus the needle itself
    assert abs(needle_sentence.token_start - total / 2) <= longest + needle_sentence.token_len


def test_needle_text_is_recoverable_verbatim():
    for depth in (0, 30, 75, 100):
        doc, nid = build_haystack(_spec(1200, depth, seed=3))
        s = segment_sentences(doc, TOK)[nid]
        assert NEEDLE in s.text


def test_length_is_approximately_met():
    doc, _ = build_haystack(_spec(4096, 40))
    n = len(TOK.encode(doc))
    assert 4096 <= n <= 4096 + 120   # at most one filler sentence of overshoot


def test_same_seed_same_haystack():
    a, _ = build_haystack(_spec(900, 60, seed=5))
    b, _ = build_haystack(_spec(900, 60, seed=5))
    c, _ = build_haystack(_spec(900, 60, seed=6))
    assert a == b and a != c


def test_impossible_length_rejected():
    with pytest.raises(ConfigurationError):
        build_haystack(_spec(10, 50))


def test_multi_sentence_needle_rejected():
    spec = HaystackSpec(target_length=500, needle="Two parts. Same needle.",
                        depth_percent=50, question="q?", expected_answer="x")
    with pytest.raises(ConfigurationError):
        build_haystack(spec)


def test_depth_out_of_range_rejected():
    with pytest.raises(ConfigurationError):
        _spec(500, 101)


# -- answer scoring -------------------------------------------------------------


def test_overlap_verbatim_match_is_full_credit():
    assert answer_overlap("  THE secret ingredient is toasted cardamom. ",
                          NEEDLE) == 1.0


def test_overlap_partial_words_get_partial_credit():
    score = answer_overlap("the ingredient is cardamom", NEEDLE)
    assert 0.0 < score < 1.0


def test_overlap_disjoint_is_zero():
    assert answer_overlap("completely unrelated text", "xyzzy plugh") == 0.0


# -- grids ------------------------------------------------------------------------


def test_small_oracle_grid_has_full_recall():
    grid = run_grid([1024, 2048], [0, 50, 100], oracle_factory,
                    needle=NEEDLE, question=QUESTION, expected_answer=NEEDLE,
                    config=FAST)
    assert len(grid.cells) == 6
    assert all(c.error is None for c in grid.cells)
    assert all(c.recall_hit for c in grid.cells)
    assert all(c.answer_match == 1.0 for c in grid.cells)
    assert grid.recall_rate == 1.0
    assert grid.provider_name == "oracle"


def test_toy_grid_completes_regardless_of_accuracy():
    grid = run_grid([512], [0, 100], lambda: ToyProvider(ToyModelSpec(seed=2)),
                    needle=NEEDLE, question=QUESTION, expected_answer=NEEDLE,
                    config=PipelineConfig(chunk_size=128, top_k=10,
                                          phrase_token_num=3, max_new_tokens=4))
    assert len(grid.cells) == 2
    assert all(c.error is None for c in grid.cells)
    assert all(c.forward_passes == c.chunk_count + 1 for c in grid.cells)


def test_cell_failures_are_recorded_not_raised():
    # a provider window far too small for even one chunk
    grid = run_grid([1024], [0], lambda: ToyProvider(ToyModelSpec(max_window=16)),
                    needle=NEEDLE, question=QUESTION, expected_answer=NEEDLE,
                    config=FAST)
    (cell,) = grid.cells
    assert cell.error is not None and "window" in cell.error.lower()
    assert not cell.recall_hit


def test_parallel_grid_equals_serial_grid():
    kwargs = dict(needle=NEEDLE, question=QUESTION, expected_answer=NEEDLE,
                  config=FAST)
    serial = run_grid([1024], [0, 50, 100], oracle_factory, jobs=1, **kwargs)
    parallel = run_grid([1024], [0, 50, 100], oracle_factory, jobs=3, **kwargs)
    assert serial.to_json() == parallel.to_json()


def test_empty_grid_rejected():
    with pytest.raises(ConfigurationError):
        run_grid([], [0], oracle_factory, needle=NEEDLE, question=QUESTION,
                 expected_answer=NEEDLE)


def test_grid_determinism():
    kwargs = dict(needle=NEEDLE, question=QUESTION, expected_answer=NEEDLE,
                  config=FAST, filler_seed=4)
    a = run_grid([1024], [0, 100], oracle_factory, **kwargs)
    b = run_grid([1024], [0, 100], oracle_factory, **kwargs)
    assert a.to_json() == b.to_json()


# -- heatmap emission --------------------------------------------------------------


def _mixed_grid():
    grid = run_grid([1024], [0, 50, 100], oracle_factory, needle=NEEDLE,
                    question=QUESTION, expected_answer=NEEDLE, config=FAST)
    # doctor two cells to cover the color range deterministically
    grid.cells[1].answer_match = 0.4
    grid.cells[2].answer_match = 0.0
    grid.cells[2].recall_hit = False
    return grid


def test_heatmap_csv_and_svg_agree(tmp_path):
    grid = _mixed_grid()
    paths = emit_heatmap(grid, str(tmp_path / "grid.csv"))
    with open(paths["csv"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["answer_match"]) for r in rows] == [1.0, 0.4, 0.0]
    svg = open(paths["svg"], encoding="utf-8").read()
    for row in rows:
        color = ramp_green_red(float(row["answer_match"]))
        assert color in svg
    # color order: matched cells must appear left to right in document order
    assert svg.index(ramp_green_red(1.0)) < svg.index(ramp_green_red(0.4))


def test_heatmap_marks_error_cells_grey(tmp_path):
    grid = _mixed_grid()
    grid.cells[0].error = "BoomError: synthetic"
    paths = emit_heatmap(grid, str(tmp_path / "grid"))
    svg = open(paths["svg"], encoding="utf-8").read()
    assert "#bdbdbd" in svg
    with open(paths["csv"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["error"] == "BoomError: synthetic"


def test_heatmap_output_is_byte_stable(tmp_path):
    grid = _mixed_grid()
    p1 = emit_heatmap(grid, str(tmp_path / "a.svg"))
    p2 = emit_heatmap(grid, str(tmp_path / "b.svg"))
    assert open(p1["svg"], "rb").read() == open(p2["svg"], "rb").read()
    assert open(p1["csv"], "rb").read() == open(p2["csv"], "rb").read()


# -- cache-mode comparison -----------------------------------------------------------


def test_compare_cache_modes_reports_both():
    result = compare_cache_modes(lambda: ToyProvider(ToyModelSpec(seed=1)),
                                 doc_count=3)
    assert set(result.recall) == {"token_ids", "kv_state"}
    assert len(result.per_doc) == 3
    for entry in result.per_doc:
        assert "token_ids" in entry and "kv_state" in entry
    for mode, value in result.recall.items():
        assert 0.0 <= value <= 1.0
