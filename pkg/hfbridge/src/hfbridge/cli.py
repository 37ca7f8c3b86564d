"""Entry point: ``adapter --model <name-or-path> --device <dev>``.

Loads the checkpoint, emits the handshake, and serves the wire protocol on
stdio until stdin closes. A load failure reports one error line on stdout
(where a client is listening for the handshake) and exits 2.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointModel
from .server import dumps_line, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adapter",
        description="Serve a transformer checkpoint over the stdio attention protocol.",
    )
    parser.add_argument("--model", required=True,
                        help="checkpoint name or local directory")
    parser.add_argument("--device", default="cpu",
                        help="torch device to run on (default: cpu)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        model = CheckpointModel(args.model, device=args.device)
    except Exception as exc:  # noqa: BLE001 -- report any load failure in-band
        sys.stdout.write(dumps_line({"error": f"{type(exc).__name__}: {exc}"}) + "\n")
        sys.stdout.flush()
        print(f"adapter: failed to load {args.model!r}: {exc}", file=sys.stderr)
        return 2
    serve(model, sys.stdin.buffer, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
