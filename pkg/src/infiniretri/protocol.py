"""Newline-delimited JSON wire protocol between the engine and external adapters.

One JSON object per line over stdin/stdout. The server first emits a
handshake ``{"vocab_size": int, "layers": int, "max_window": int}``, then
answers each request with a response carrying the same ``id``. Attention
payloads travel as base64 of row-major, head-major little-endian float32.
"""

from __future__ import annotations

import base64
import json
import shlex
import subprocess
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .attention import AttentionTensor
from .errors import ProtocolError, WindowExceededError
from .providers import Provider

REQUEST_KINDS = ("attention", "generate", "tokenize", "detokenize")


def dumps_line(obj: dict) -> str:
    """Canonical one-line encoding; key order fixed so transcripts are stable."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass
class ProviderRequest:
    """One wire request. Every schema key is always present on the wire."""

    id: int
    kind: str
    tokens: list[int] | None = None
    text: str | None = None
    layer: int | str = "last"
    query_start: int = 0
    query_len: int = 0
    max_new_tokens: int = 1

    def to_wire(self) -> dict:
        return {
            "id": self.id, "kind": self.kind, "tokens": self.tokens, "text": self.text,
            "layer": self.layer, "query_start": self.query_start,
            "query_len": self.query_len, "max_new_tokens": self.max_new_tokens,
        }

    @staticmethod
    def from_wire(obj: dict) -> "ProviderRequest":
        if not isinstance(obj, dict):
            raise ProtocolError("request must be a JSON object")
        rid = obj.get("id")
        if not isinstance(rid, int):
            raise ProtocolError("request id must be an integer")
        kind = obj.get("kind")
        if kind not in REQUEST_KINDS:
            raise ProtocolError(f"unknown request kind {kind!r}")
        tokens = obj.get("tokens")
        if tokens is not None and (not isinstance(tokens, list)
                                   or any(not isinstance(t, int) for t in tokens)):
            raise ProtocolError("tokens must be a list of integers or null")
        text = obj.get("text")
        if text is not None and not isinstance(text, str):
            raise ProtocolError("text must be a string or null")
        layer = obj.get("layer", "last")
        if layer != "last" and not isinstance(layer, int):
            raise ProtocolError("layer must be an integer or 'last'")
        query_start = obj.get("query_start", 0)
        query_len = obj.get("query_len", 0)
        max_new = obj.get("max_new_tokens", 1)
        for name, val in (("query_start", query_start), ("query_len", query_len),
                          ("max_new_tokens", max_new)):
            if not isinstance(val, int) or val < 0:
                raise ProtocolError(f"{name} must be a non-negative integer")

        if kind == "attention":
            if tokens is None or not tokens:
                raise ProtocolError("attention request needs non-empty tokens")
            if query_len < 1 or query_start + query_len > len(tokens):
                raise ProtocolError(
                    f"query range [{query_start}, {query_start + query_len}) outside "
                    f"input of {len(tokens)} tokens")
        elif kind == "generate":
            if tokens is None or not tokens:
                raise ProtocolError("generate request needs non-empty tokens")
            if max_new < 1:
                raise ProtocolError("max_new_tokens must be >= 1 for generate")
        elif kind == "tokenize":
            if text is None:
                raise ProtocolError("tokenize request needs text")
        elif kind == "detokenize":
            if tokens is None:
                raise ProtocolError("detokenize request needs tokens")
        return ProviderRequest(rid, kind, tokens, text, layer, query_start, query_len, max_new)


def encode_attention_payload(tensor: AttentionTensor) -> dict:
    heads, rows, cols = tensor.heads.shape
    data = tensor.heads.astype("<f4").tobytes(order="C")
    return {
        "heads": int(heads), "rows": int(rows), "cols": int(cols),
        "data_b64": base64.b64encode(data).decode("ascii"),
    }


def decode_attention_payload(obj: dict) -> np.ndarray:
    for key in ("heads", "rows", "cols", "data_b64"):
        if key not in obj:
            raise ProtocolError(f"attention response missing {key!r}")
    heads, rows, cols = obj["heads"], obj["rows"], obj["cols"]
    raw = base64.b64decode(obj["data_b64"])
    expect = heads * rows * cols * 4
    if len(raw) != expect:
        raise ProtocolError(f"attention payload of {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(heads, rows, cols).astype(np.float64)


# -- server ----------------------------------------------------------------

def _dispatch(provider: Provider, req: ProviderRequest) -> dict:
    if req.kind == "attention":
        qrange = range(req.query_start, req.query_start + req.query_len)
        tensor = provider.get_attention(req.tokens, req.layer, qrange)
        resp = {"id": req.id}
        resp.update(encode_attention_payload(tensor))
        return resp
    if req.kind == "generate":
        out = provider.generate(req.tokens, req.max_new_tokens)
        return {"id": req.id, "tokens": [int(t) for t in out]}
    if req.kind == "tokenize":
        return {"id": req.id, "tokens": [int(t) for t in provider.encode(req.text)]}
    return {"id": req.id, "text": provider.decode(req.tokens)}


def serve(provider: Provider, infile: IO[bytes], outfile: IO[bytes]) -> None:
    """Blocking request loop: handshake, then answer until EOF.

    Per-request failures become error replies; the loop keeps going.
    """
    handshake = {
        "vocab_size": int(getattr(provider, "vocab_size", 0)),
        "layers": int(provider.layers),
        "max_window": int(provider.max_window),
    }
    outfile.write((dumps_line(handshake) + "\n").encode("utf-8"))
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
            req = ProviderRequest.from_wire(obj)
            resp = _dispatch(provider, req)
        except json.JSONDecodeError as exc:
            resp = {"id": rid, "error": f"bad json: {exc.msg}"}
        except Exception as exc:  # every failure answers; the loop survives
            resp = {"id": rid, "error": f"{type(exc).__name__}: {exc}"}
        outfile.write((dumps_line(resp) + "\n").encode("utf-8"))
        outfile.flush()


# -- client ----------------------------------------------------------------

class ProtocolClient(Provider):
    """Provider backed by an external adapter process over stdio.

    One client owns one subprocess; requests are strictly serialized on the
    connection. The handshake advertises the adapter's vocab/layer/window.
    """

    name = "proto"

    def __init__(self, cmd: str | Sequence[str]) -> None:
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        if not argv:
            raise ProtocolError("empty adapter command")
        self.cmd = argv
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise ProtocolError(f"cannot launch adapter {argv!r}: {exc}") from exc
        self._next_id = 0
        hs = self._read_line()
        for key in ("vocab_size", "layers", "max_window"):
            if not isinstance(hs.get(key), int):
                raise ProtocolError(f"handshake missing integer {key!r}: {hs}")
        if "error" in hs:
            raise ProtocolError(f"adapter failed to start: {hs['error']}")
        self.vocab_size = hs["vocab_size"]
        self.layers = hs["layers"]
        self.max_window = hs["max_window"]
        self.handshake = hs

    def _read_line(self) -> dict:
        raw = self.proc.stdout.readline()
        if not raw:
            code = self.proc.poll()
            raise ProtocolError(f"adapter closed the connection (exit code {code})")
        try:
            obj = json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable line from adapter: {raw[:200]!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"adapter sent a non-object: {obj!r}")
        return obj

    def _call(self, req: ProviderRequest) -> dict:
        payload = (dumps_line(req.to_wire()) + "\n").encode("utf-8")
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"adapter pipe broken: {exc}") from exc
        resp = self._read_line()
        if resp.get("id") != req.id:
            raise ProtocolError(f"response id {resp.get('id')} does not echo request id {req.id}")
        if "error" in resp:
            msg = resp["error"]
            if "window" in str(msg).lower():
                raise WindowExceededError(str(msg))
            raise ProtocolError(f"adapter error: {msg}")
        return resp

    def _take_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def encode(self, text: str) -> list[int]:
        resp = self._call(ProviderRequest(self._take_id(), "tokenize", text=text))
        return [int(t) for t in resp.get("tokens", [])]

    def decode(self, tokens: Sequence[int]) -> str:
        resp = self._call(ProviderRequest(self._take_id(), "detokenize",
                                          tokens=[int(t) for t in tokens]))
        return str(resp.get("text", ""))

    def get_attention(self, tokens: Sequence[int], layer: int | str,
                      query_range: range) -> AttentionTensor:
        toks = [int(t) for t in tokens]
        if len(toks) > self.max_window:
            raise WindowExceededError(
                f"input of {len(toks)} tokens exceeds adapter window {self.max_window}")
        if len(query_range) < 1 or query_range.start < 0 or query_range.stop > len(toks):
            raise ValueError(f"query_range {query_range} outside input of length {len(toks)}")
        req = ProviderRequest(self._take_id(), "attention", tokens=toks, layer=layer,
                              query_start=query_range.start, query_len=len(query_range))
        resp = self._call(req)
        heads = decode_attention_payload(resp)
        if heads.shape[1] != len(query_range) or heads.shape[2] != len(toks):
            raise ProtocolError(
                f"attention shape {heads.shape} does not match request "
                f"({len(query_range)} rows, {len(toks)} cols)")
        li = self.resolve_layer(layer)
        return AttentionTensor(li, heads, query_range, range(0, len(toks)))

    def generate(self, tokens: Sequence[int], max_new_tokens: int) -> list[int]:
        if max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {max_new_tokens}")
        toks = [int(t) for t in tokens]
        if len(toks) > self.max_window:
            raise WindowExceededError(
                f"input of {len(toks)} tokens exceeds adapter window {self.max_window}")
        req = ProviderRequest(self._take_id(), "generate", tokens=toks,
                              max_new_tokens=max_new_tokens)
        return [int(t) for t in self._call(req).get("tokens", [])]

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
