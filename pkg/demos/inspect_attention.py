#!/usr/bin/env python3
"""Look at the attention the retrieval loop actually uses.

Part 1 exports a question-to-context heatmap for a short document: with a
planted provider the answer tokens light up as a bright column block.
Part 2 runs the per-layer sweep against a provider whose mass sits on one
known layer and shows the sweep finding it.

Run: python3 demos/inspect_attention.py [--out attention.svg]
"""

import argparse

import numpy as np

from infiniretri import (PlantedOracle, PlantedOracleSpec, aggregate_heads,
                         segment_sentences)
from infiniretri.analysis import (QaSample, export_attention_heatmap,
                                  layer_sweep)
from infiniretri.tokenizer import ByteTokenizer

NEEDLE = "The archive key is stored in the red cabinet."
QUESTION = "Where is the archive key stored?"
CONTEXT = ("Morning fog covered the yard until nine. "
           "A clerk stacked folders along the west wall. " + NEEDLE +
           " Nobody used the service lift that day. "
           "The radiators clicked as the building warmed.")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="attention.svg")
    args = ap.parse_args()

    tok = ByteTokenizer()
    pattern = tuple(tok.encode(NEEDLE))

    # part 1: what does the question look at?
    provider = PlantedOracle(PlantedOracleSpec.plant({pattern: 0.8}))
    context_tokens = provider.encode(CONTEXT)
    question_tokens = provider.encode(" " + QUESTION)
    tokens = context_tokens + question_tokens
    qr = range(len(context_tokens), len(tokens))
    tensor = provider.get_attention(tokens, "last", qr)
    agg = aggregate_heads(tensor)

    col_mass = agg.sum(axis=0)
    order = np.argsort(-col_mass)[:10]
    print("ten most-attended context positions (token -> mass):")
    for pos in sorted(int(p) for p in order):
        ch = provider.decode([tokens[pos]])
        label = ch if ch.isprintable() and ch.strip() else f"#{tokens[pos]}"
        print(f"  col {pos:>4} {label!r:>6}  {col_mass[pos]:.4f}")
    start = CONTEXT.index(NEEDLE)
    print(f"(the answer occupies columns {start}..{start + len(NEEDLE) - 1})\n")

    csv_path = (args.out[:-4] if args.out.endswith(".svg") else args.out) + ".csv"
    written = export_attention_heatmap(
        agg, [f"q{i}" for i in range(agg.shape[0])],
        [str(j) for j in range(agg.shape[1])],
        svg_path=args.out if args.out.endswith(".svg") else args.out + ".svg",
        csv_path=csv_path, title="question-to-context attention")
    print(f"wrote {written['svg']} and {written['csv']}\n")

    # part 2: which layer should retrieval read?
    sentences = segment_sentences(CONTEXT, provider)
    answer_sentence = next(s for s in sentences if NEEDLE in s.text)
    sample = QaSample(context=CONTEXT, question=QUESTION,
                      answer_start=answer_sentence.token_start,
                      answer_len=answer_sentence.token_len)

    planted_layer = 2
    profile = tuple(1.0 if i == planted_layer else 0.0 for i in range(4))
    layered = PlantedOracle(PlantedOracleSpec.plant({pattern: 0.9},
                                                    layer_profile=profile))
    result = layer_sweep([sample] * 3, layered, top_k=1, phrase_token_num=3)
    print(f"per-layer retrieval accuracy (mass planted on layer {planted_layer}):")
    for i, acc in enumerate(result.accuracies):
        bar = "#" * int(acc * 20)
        print(f"  layer {i}: {acc:.2f} {bar}")
    print(f"sweep picks layer {result.best_layer}")


if __name__ == "__main__":
    main()
