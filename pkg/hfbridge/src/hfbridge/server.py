"""The adapter side of the stdio wire protocol.

One JSON object per line. The server emits a handshake first, then answers
each request with a reply carrying the same id; any per-request failure
becomes an error reply and the loop continues. Replies are serialized with
sorted keys and compact separators so a session transcript is byte-stable.
"""

from __future__ import annotations

import base64
import json
from typing import IO

import numpy as np

from .checkpoint import CheckpointModel

REQUEST_KINDS = ("attention", "generate", "tokenize", "detokenize")


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


class BadRequest(ValueError):
    """Request object violates the wire schema."""


def _validated(obj: object) -> dict:
    if not isinstance(obj, dict):
        raise BadRequest("request must be a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise BadRequest("request id must be an integer")
    kind = obj.get("kind")
    if kind not in REQUEST_KINDS:
        raise BadRequest(f"unknown request kind {kind!r}")
    tokens = obj.get("tokens")
    if tokens is not None:
        if not isinstance(tokens, list) or any(
                not isinstance(t, int) or isinstance(t, bool) for t in tokens):
            raise BadRequest("tokens must be a list of integers or null")
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise BadRequest("text must be a string or null")
    layer = obj.get("layer", "last")
    if layer != "last" and not (isinstance(layer, int) and not isinstance(layer, bool)):
        raise BadRequest("layer must be an integer or 'last'")
    for key in ("query_start", "query_len", "max_new_tokens"):
        val = obj.get(key, 0)
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            raise BadRequest(f"{key} must be a non-negative integer")

    if kind in ("attention", "generate", "detokenize") and tokens is None:
        raise BadRequest(f"{kind} request needs tokens")
    if kind == "attention" and not tokens:
        raise BadRequest("attention request needs non-empty tokens")
    if kind == "tokenize" and text is None:
        raise BadRequest("tokenize request needs text")
    if kind == "generate" and obj.get("max_new_tokens", 0) < 1:
        raise BadRequest("generate request needs max_new_tokens >= 1")
    return obj


def _dispatch(model: CheckpointModel, req: dict) -> dict:
    rid = req["id"]
    kind = req["kind"]
    if kind == "attention":
        block = model.attention(req["tokens"], req.get("layer", "last"),
                                req.get("query_start", 0), req.get("query_len", 0))
        heads, rows, cols = block.shape
        data = block.astype("<f4").tobytes(order="C")
        return {
            "id": rid, "heads": int(heads), "rows": int(rows), "cols": int(cols),
            "data_b64": base64.b64encode(data).decode("ascii"),
        }
    if kind == "generate":
        out = model.generate(req["tokens"], req["max_new_tokens"])
        return {"id": rid, "tokens": out}
    if kind == "tokenize":
        return {"id": rid, "tokens": model.encode(req["text"])}
    return {"id": rid, "text": model.decode(req["tokens"])}


def handshake_line(model: CheckpointModel) -> str:
    """Advertises the checkpoint's shape; `heads` is informational (grouped
    -query models still answer with one matrix per query head)."""
    return dumps_line({
        "vocab_size": model.vocab_size,
        "layers": model.layers,
        "max_window": model.max_window,
        "heads": model.heads,
    })


def serve(model: CheckpointModel, infile: IO[bytes], outfile: IO[bytes]) -> None:
    outfile.write((handshake_line(model) + "\n").encode("utf-8"))
    outfile.flush()
    for raw in infile:
        line = raw.decode("utf-8", errors="replace").strip()
        if not line:
            continue
        rid = -1
        try:
            obj = json.loads(line)
            if isinstance(obj, dict) and isinstance(obj.get("id"), int):
                rid = obj["id"]
            req = _validated(obj)
            resp = _dispatch(model, req)
        except json.JSONDecodeError as exc:
            resp = {"id": rid, "error": f"bad json: {exc.msg}"}
        except Exception as exc:  # noqa: BLE001 -- every failure answers in-band
            resp = {"id": rid, "error": f"{type(exc).__name__}: {exc}"}
        outfile.write((dumps_line(resp) + "\n").encode("utf-8"))
        outfile.flush()


def decode_attention_payload(obj: dict) -> np.ndarray:
    """Inverse of the attention reply encoding (useful for tests and probes)."""
    raw = base64.b64decode(obj["data_b64"])
    heads, rows, cols = obj["heads"], obj["rows"], obj["cols"]
    if len(raw) != heads * rows * cols * 4:
        raise ValueError(f"payload of {len(raw)} bytes does not match "
                         f"{heads}x{rows}x{cols} float32")
    return np.frombuffer(raw, dtype="<f4").reshape(heads, rows, cols).astype(np.float64)
