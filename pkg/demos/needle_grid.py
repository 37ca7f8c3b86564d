#!/usr/bin/env python3
"""Sweep needle recall over document length x needle depth.

Every cell synthesizes a fresh haystack, hides the same needle sentence at a
different depth, and runs the full retrieval loop. The grid prints as text
and lands on disk as CSV + SVG twins.

Run: python3 demos/needle_grid.py [--out grid.csv] [--jobs 4]
"""

import argparse

from infiniretri import PipelineConfig, PlantedOracle, PlantedOracleSpec
from infiniretri.nih import emit_heatmap, run_grid
from infiniretri.tokenizer import ByteTokenizer

NEEDLE = "The shipment manifest is filed under drawer nineteen."
QUESTION = "Where is the shipment manifest filed?"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lengths", default="1024,4096,16384")
    ap.add_argument("--depths", default="0,25,50,75,100")
    ap.add_argument("--out", default="needle_grid.csv")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    lengths = [int(x) for x in args.lengths.split(",")]
    depths = [float(x) for x in args.depths.split(",")]

    tok = ByteTokenizer()

    def factory() -> PlantedOracle:
        return PlantedOracle(PlantedOracleSpec.plant(
            {tuple(tok.encode(NEEDLE)): 0.8}))

    grid = run_grid(lengths, depths, factory, needle=NEEDLE, question=QUESTION,
                    expected_answer=NEEDLE,
                    config=PipelineConfig(chunk_size=512, top_k=60,
                                          phrase_token_num=5, max_new_tokens=64),
                    jobs=args.jobs)

    header = "length \\ depth%"
    print(f"{header:>16} " + " ".join(f"{d:>6g}" for d in grid.depths))
    for length in grid.lengths:
        row = [grid.cell(length, d) for d in grid.depths]
        marks = " ".join(f"{c.answer_match:>6.2f}" if c.error is None else "   err"
                         for c in row)
        print(f"{length:>16} {marks}")

    print(f"\nrecall rate: {100 * grid.recall_rate:.1f}% over {len(grid.cells)} cells")
    errors = [c for c in grid.cells if c.error]
    for c in errors:
        print(f"  failed cell len={c.length} depth={c.depth:g}: {c.error}")

    paths = emit_heatmap(grid, args.out)
    print(f"wrote {paths['csv']} and {paths['svg']}")


if __name__ == "__main__":
    main()
