"""Command-line front end.

Subcommands: `run` (one document + question), `nih` (length x depth grid),
`analyze heatmap` / `analyze sweep`, and `provider serve` / `provider check`.
Settings resolve as flags > config file (`key=value` lines) > defaults.
Exit codes: 0 success, 1 input/configuration error, 2 provider/protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Sequence

import numpy as np

from . import analysis, nih, protocol
from .attention import aggregate_heads
from .cache import CacheState, merge
from .errors import (ConfigurationError, ProtocolError, UnsupportedModeError,
                     WindowExceededError)
from .pipeline import PipelineConfig, run as run_pipeline
from .providers import PlantedOracle, PlantedOracleSpec, Provider, ToyProvider
from .protocol import ProtocolClient
from .textseg import Chunk, segment_sentences
from .toymodel import ToyModelSpec

ENV_PROVIDER_CMD = "INFINIRETRI_PROVIDER_CMD"

_CONFIG_FIELDS = ("chunk_size", "top_k", "phrase_token_num", "layer",
                  "max_new_tokens", "cache_mode")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_layer(value: str) -> int | str:
    if value == "last":
        return "last"
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"layer must be an integer or 'last', got {value!r}")


def _parse_int_list(value: str) -> list[int]:
    try:
        return [int(x) for x in value.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def load_config_file(path: str) -> dict:
    """Plain `key=value` lines; blank lines and `#` comments ignored."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_FIELDS:
                raise ConfigurationError(f"{path}:{lineno}: unknown setting {key!r}")
            if key == "layer":
                values[key] = val if val == "last" else int(val)
            elif key == "cache_mode":
                values[key] = val
            else:
                try:
                    values[key] = int(val)
                except ValueError:
                    raise ConfigurationError(f"{path}:{lineno}: {key} must be an integer")
    return values


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    values = {f: getattr(PipelineConfig, f) for f in _CONFIG_FIELDS}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for field in _CONFIG_FIELDS:
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


def _print_config(cfg: PipelineConfig) -> None:
    for field in _CONFIG_FIELDS:
        print(f"{field}={getattr(cfg, field)}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value settings file")
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--phrase-token-num", dest="phrase_token_num", type=int)
    p.add_argument("--layer", type=_parse_layer)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--cache-mode", dest="cache_mode", choices=("token_ids", "kv_state"))
    p.add_argument("--show-config", action="store_true",
                   help="print the resolved settings and exit")


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=("toy", "oracle", "proto"), default="toy")
    p.add_argument("--provider-cmd", metavar="CMD",
                   help=f"adapter launch command (default: ${ENV_PROVIDER_CMD})")
    p.add_argument("--seed", type=int, default=0, help="toy weights / oracle noise seed")
    p.add_argument("--layers", type=int, help="layer count for toy/oracle providers")
    p.add_argument("--plant", metavar="TEXT", action="append", default=[],
                   help="oracle only: concentrate attention on this text's tokens")
    p.add_argument("--plant-mass", dest="plant_mass", type=float, default=0.8)


def build_provider(args: argparse.Namespace,
                   extra_plants: Sequence[str] = ()) -> Provider:
    if args.provider == "toy":
        spec = ToyModelSpec(seed=args.seed, layers=args.layers or 4)
        return ToyProvider(spec)
    if args.provider == "oracle":
        texts = list(args.plant) + [t for t in extra_plants if t]
        profile = tuple(1.0 for _ in range(args.layers or 1))
        from .tokenizer import ByteTokenizer
        tok = ByteTokenizer()
        spans = {tuple(tok.encode(t)): args.plant_mass for t in texts if t}
        spec = PlantedOracleSpec.plant(spans, noise_seed=args.seed, layer_profile=profile)
        return PlantedOracle(spec)
    cmd = args.provider_cmd or os.environ.get(ENV_PROVIDER_CMD)
    if not cmd:
        raise ConfigurationError(
            f"--provider proto needs --provider-cmd or ${ENV_PROVIDER_CMD}")
    return ProtocolClient(cmd)


def _read_document(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise ConfigurationError(f"missing required option --{name.replace('_', '-')}")


# -- subcommand handlers ----------------------------------------------------

def _cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.show_config:
        _print_config(cfg)
        return 0
    _require(args, "doc", "question")
    document = _read_document(args.doc)
    provider = build_provider(args)
    try:
        trace = run_pipeline(provider, document, args.question, cfg)
    finally:
        provider.close()
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(trace.to_json())
    if args.json:
        print(json.dumps(trace.to_dict(), sort_keys=True, indent=2))
    else:
        print(trace.answer_text)
        print(f"-- document tokens: {trace.document_tokens}, "
              f"chunks: {trace.chunk_count}, forward passes: {trace.forward_passes}",
              file=sys.stderr)
        print(f"-- cache: {len(trace.final_cache_ids)} sentences "
              f"({trace.final_cache_tokens} tokens), "
              f"fed-token ratio: {trace.fed_token_ratio:.4f}", file=sys.stderr)
    return 0


def _cmd_nih(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.show_config:
        _print_config(cfg)
        return 0
    _require(args, "lengths", "depths")
    expected = args.expected or args.needle

    def factory() -> Provider:
        return build_provider(args, extra_plants=(args.needle,))

    grid = nih.run_grid(args.lengths, [float(d) for d in args.depths], factory,
                        needle=args.needle, question=args.question,
                        expected_answer=expected, config=cfg,
                        filler_seed=args.filler_seed, jobs=args.jobs)
    if args.out:
        paths = nih.emit_heatmap(grid, args.out)
        print(f"wrote {paths['csv']} and {paths['svg']}", file=sys.stderr)
    if args.json:
        print(grid.to_json(), end="")
    else:
        hit = sum(1 for c in grid.cells if c.recall_hit)
        print(f"recall {hit}/{len(grid.cells)} cells "
              f"({100.0 * grid.recall_rate:.1f}%)")
        bad = [c for c in grid.cells if c.error]
        for c in bad:
            print(f"  cell len={c.length} depth={c.depth:g}: {c.error}", file=sys.stderr)
    return 0


def _cmd_analyze_heatmap(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.show_config:
        _print_config(cfg)
        return 0
    _require(args, "question", "out")
    if args.text is None and args.doc is None:
        raise ConfigurationError("need --doc FILE or --text TEXT")
    document = args.text if args.text is not None else _read_document(args.doc)
    provider = build_provider(args)
    try:
        sentences = segment_sentences(document, provider)
        if not sentences:
            raise ConfigurationError("document has no sentences")
        question_tokens = provider.encode(args.question)
        merged = merge(CacheState.empty(), Chunk(0, tuple(sentences)), question_tokens)
        if len(merged.tokens) > provider.max_window:
            raise WindowExceededError(
                f"document + question is {len(merged.tokens)} tokens; provider window "
                f"is {provider.max_window} (heatmaps need a single window)")
        layer = cfg.layer if args.layer is None else args.layer
        tensor = provider.get_attention(list(merged.tokens), layer,
                                        merged.question_range)
        agg = aggregate_heads(tensor)
        q_labels = [_token_label(provider, merged.tokens[i])
                    for i in merged.question_range]
        k_labels = [_token_label(provider, t) for t in merged.tokens]
        base = args.out
        svg_path = base if base.endswith(".svg") else base + ".svg"
        csv_path = (base[:-4] if base.endswith(".svg") else base) + ".csv"
        written = analysis.export_attention_heatmap(
            agg, q_labels, k_labels, svg_path=svg_path, csv_path=csv_path,
            title=f"layer {tensor.layer} question-to-context attention")
        print(f"wrote {written['svg']} and {written['csv']}", file=sys.stderr)
    finally:
        provider.close()
    return 0


def _token_label(provider: Provider, token: int) -> str:
    text = provider.decode([int(token)])
    if text and text.isprintable():
        return text
    return f"#{int(token)}"


def _cmd_analyze_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.show_config:
        _print_config(cfg)
        return 0
    _require(args, "samples")
    with open(args.samples, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ConfigurationError("samples file must hold a JSON list")
    samples = [analysis.QaSample(context=s["context"], question=s["question"],
                                 answer_start=int(s["answer_start"]),
                                 answer_len=int(s["answer_len"]))
               for s in raw]
    provider = build_provider(args)
    try:
        result = analysis.layer_sweep(samples, provider, top_k=cfg.top_k,
                                      phrase_token_num=cfg.phrase_token_num)
    finally:
        provider.close()
    if args.json:
        print(json.dumps({
            "accuracies": list(result.accuracies), "hits": list(result.hits),
            "sample_count": result.sample_count, "skipped": result.skipped,
        }, sort_keys=True, indent=2))
    else:
        for i, acc in enumerate(result.accuracies):
            print(f"layer {i}: {acc:.3f} ({result.hits[i]}/{result.sample_count})")
        if result.accuracies:
            print(f"best layer: {result.best_layer}")
        if result.skipped:
            print(f"skipped {result.skipped} over-window sample(s)", file=sys.stderr)
    return 0


def _cmd_provider_serve(args: argparse.Namespace) -> int:
    if args.provider == "proto":
        raise ConfigurationError("serve hosts a local provider; use toy or oracle")
    provider = build_provider(args)
    try:
        protocol.serve(provider, sys.stdin.buffer, sys.stdout.buffer)
    finally:
        provider.close()
    return 0


def _cmd_provider_check(args: argparse.Namespace) -> int:
    cmd = args.cmd or os.environ.get(ENV_PROVIDER_CMD)
    if not cmd:
        raise ConfigurationError(f"need --cmd or ${ENV_PROVIDER_CMD}")
    client = ProtocolClient(cmd)
    try:
        print(json.dumps(client.handshake, sort_keys=True))
        tokens = client.encode("round trip probe.")
        text = client.decode(tokens)
        qlen = min(2, len(tokens))
        tensor = client.get_attention(tokens, "last",
                                      range(len(tokens) - qlen, len(tokens)))
        sums = aggregate_heads(tensor).sum(axis=1)
        print(f"tokenize: {len(tokens)} tokens, round trip "
              f"{'ok' if text else 'lossy'}")
        print(f"attention: {tensor.heads.shape[0]} heads, aggregated row sums "
              f"{np.array2string(sums, precision=4)}")
        print("ok")
    finally:
        client.close()
    return 0


# -- parser -----------------------------------------------------------------

def build_arg_parser() -> _Parser:
    parser = _Parser(prog="infiniretri",
                     description="attention-guided retrieval over unbounded documents")
    parser.add_argument("--show-config", action="store_true",
                        help="print default settings and exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p_run = sub.add_parser("run", help="answer one question over one document",
                           parents=[], description="Run the sliding-window loop.")
    p_run.add_argument("--doc", metavar="FILE", help="document path, or - for stdin")
    p_run.add_argument("--question", metavar="TEXT")
    p_run.add_argument("--trace-out", dest="trace_out", metavar="FILE",
                       help="write the full run trace as JSON")
    p_run.add_argument("--json", action="store_true")
    _add_provider_flags(p_run)
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_nih = sub.add_parser("nih", help="needle-in-a-haystack grid")
    p_nih.add_argument("--lengths", type=_parse_int_list,
                       help="comma-separated token lengths, e.g. 2048,4096")
    p_nih.add_argument("--depths", type=_parse_int_list,
                       help="comma-separated depth percents, e.g. 0,50,100")
    p_nih.add_argument("--needle",
                       default="The secret passphrase is bright violet kestrel.")
    p_nih.add_argument("--question", default="What is the secret passphrase?")
    p_nih.add_argument("--expected", help="expected answer (default: the needle)")
    p_nih.add_argument("--out", metavar="FILE", help="grid CSV path (SVG written beside)")
    p_nih.add_argument("--jobs", type=int, default=1)
    p_nih.add_argument("--filler-seed", dest="filler_seed", type=int, default=0)
    p_nih.add_argument("--json", action="store_true")
    _add_provider_flags(p_nih)
    _add_config_flags(p_nih)
    p_nih.set_defaults(func=_cmd_nih)

    p_an = sub.add_parser("analyze", help="attention heatmaps and layer sweeps")
    an_sub = p_an.add_subparsers(dest="analyze_command", metavar="WHAT")
    p_heat = an_sub.add_parser("heatmap", help="export question-to-context attention")
    p_heat.add_argument("--doc", metavar="FILE")
    p_heat.add_argument("--text", metavar="TEXT")
    p_heat.add_argument("--question", metavar="TEXT")
    p_heat.add_argument("--out", metavar="FILE", help="output path (.svg; .csv beside)")
    _add_provider_flags(p_heat)
    _add_config_flags(p_heat)
    p_heat.set_defaults(func=_cmd_analyze_heatmap)
    p_sweep = an_sub.add_parser("sweep", help="per-layer retrieval accuracy")
    p_sweep.add_argument("--samples", metavar="FILE",
                         help="JSON list of {context, question, answer_start, answer_len}")
    p_sweep.add_argument("--json", action="store_true")
    _add_provider_flags(p_sweep)
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_analyze_sweep)

    p_prov = sub.add_parser("provider", help="serve or probe wire-protocol adapters")
    prov_sub = p_prov.add_subparsers(dest="provider_command", metavar="WHAT")
    p_serve = prov_sub.add_parser("serve", help="serve a local provider over stdio")
    _add_provider_flags(p_serve)
    p_serve.set_defaults(func=_cmd_provider_serve)
    p_check = prov_sub.add_parser("check", help="handshake-test an adapter command")
    p_check.add_argument("--cmd", metavar="CMD",
                         help=f"adapter launch command (default: ${ENV_PROVIDER_CMD})")
    p_check.set_defaults(func=_cmd_provider_check)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if getattr(args, "func", None) is None:
        if args.show_config:
            _print_config(PipelineConfig())
            return 0
        parser.print_help(sys.stderr)
        return 1

    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except (ProtocolError, UnsupportedModeError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, WindowExceededError, OSError, ValueError,
            KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
