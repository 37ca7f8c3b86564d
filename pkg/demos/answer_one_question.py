#!/usr/bin/env python3
"""Walk through one retrieval run, step by step.

Builds a document that is far too long to hand to the provider in one piece,
then watches the sliding-window loop read it chunk by chunk: each step feeds
only (cache + one chunk + question), asks where the question's attention
lands, and keeps the winning sentences. The final answer comes from the
retained cache alone.

Run: python3 demos/answer_one_question.py [--length 6000] [--depth 35]
"""

import argparse

from infiniretri import (PipelineConfig, PlantedOracle, PlantedOracleSpec,
                         run, segment_sentences)
from infiniretri.nih import HaystackSpec, build_haystack
from infiniretri.tokenizer import ByteTokenizer

NEEDLE = "The emergency override phrase is copper falcon nine."
QUESTION = "What is the emergency override phrase?"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--length", type=int, default=6000, help="document tokens")
    ap.add_argument("--depth", type=float, default=35.0,
                    help="where the answer hides, in percent of the document")
    ap.add_argument("--chunk-size", type=int, default=512)
    ap.add_argument("--top-k", type=int, default=40)
    args = ap.parse_args()

    tok = ByteTokenizer()
    provider = PlantedOracle(PlantedOracleSpec.plant(
        {tuple(tok.encode(NEEDLE)): 0.8}))

    spec = HaystackSpec(target_length=args.length, needle=NEEDLE,
                        depth_percent=args.depth, question=QUESTION,
                        expected_answer=NEEDLE)
    document, needle_id = build_haystack(spec, provider)
    sentences = segment_sentences(document, provider)
    print(f"document: {len(tok.encode(document))} tokens, "
          f"{len(sentences)} sentences")
    print(f"the answer sentence is #{needle_id}, "
          f"{args.depth:.0f}% of the way in\n")

    cfg = PipelineConfig(chunk_size=args.chunk_size, top_k=args.top_k,
                         phrase_token_num=5, max_new_tokens=64)
    trace = run(provider, document, QUESTION, cfg)

    print(f"{'step':>4}  {'chunk':>6}  {'cache in':>8}  {'fed':>6}  kept")
    for it in trace.iterations:
        kept = ", ".join(str(i) for i in it.retained_sentence_ids[:6])
        if len(it.retained_sentence_ids) > 6:
            kept += f", ... ({len(it.retained_sentence_ids)} total)"
        marker = " <- answer" if needle_id in it.retained_sentence_ids else ""
        print(f"{it.index:>4}  {it.chunk_tokens:>6}  {it.cache_tokens_before:>8}  "
              f"{it.fed_tokens:>6}  [{kept}]{marker}")

    print()
    print(f"peak provider input: {trace.max_merged_tokens} tokens "
          f"(document itself: {trace.document_tokens})")
    print(f"answering pass reads {trace.fed_tokens_final} tokens "
          f"-> fed-token ratio {trace.fed_token_ratio:.3f}")
    print(f"needle retained: {needle_id in trace.final_cache_ids}")
    print(f"answer: {trace.answer_text!r}")


if __name__ == "__main__":
    main()
