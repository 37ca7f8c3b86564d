"""Protocol loop: framing, request validation, error envelopes, payload
encoding. Everything runs in-process against byte streams."""

import io
import json

import numpy as np
import pytest

from hfbridge.server import decode_attention_payload, dumps_line, serve


def run_serve(model, request_lines):
    stdin = io.BytesIO("".join(line + "\n" for line in request_lines).encode("utf-8"))
    stdout = io.BytesIO()
    serve(model, stdin, stdout)
    return stdout.getvalue().decode("utf-8").splitlines()


def req(rid, kind, **overrides):
    base = {"id": rid, "kind": kind, "tokens": None, "text": None, "layer": "last",
            "query_start": 0, "query_len": 0, "max_new_tokens": 1}
    base.update(overrides)
    return base


def test_handshake_is_first_and_advertises_shape(model):
    lines = run_serve(model, [])
    hs = json.loads(lines[0])
    assert hs == {
        "vocab_size": model.vocab_size,
        "layers": model.layers,
        "max_window": model.max_window,
        "heads": model.heads,
    }
    assert len(lines) == 1


def test_four_kinds_round_trip(model):
    text = "The five boxing wizards jump quickly."
    toks = model.encode(text)
    lines = run_serve(model, [
        dumps_line(req(1, "tokenize", text=text)),
        dumps_line(req(2, "attention", tokens=toks,
                       query_start=len(toks) - 2, query_len=2)),
        dumps_line(req(3, "generate", tokens=toks, max_new_tokens=3)),
        dumps_line(req(4, "detokenize", tokens=toks)),
    ])
    tok_r, att_r, gen_r, det_r = (json.loads(l) for l in lines[1:])
    assert tok_r == {"id": 1, "tokens": toks}
    assert att_r["id"] == 2
    assert (att_r["heads"], att_r["rows"], att_r["cols"]) == (model.heads, 2, len(toks))
    assert gen_r["id"] == 3 and 1 <= len(gen_r["tokens"]) <= 3
    assert det_r == {"id": 4, "text": text}


def test_attention_payload_matches_direct_call(model):
    toks = model.encode("payload fidelity check")
    lines = run_serve(model, [
        dumps_line(req(7, "attention", tokens=toks, layer=0,
                       query_start=1, query_len=len(toks) - 1)),
    ])
    resp = json.loads(lines[1])
    wire = decode_attention_payload(resp)
    direct = model.attention(toks, 0, 1, len(toks) - 1)
    np.testing.assert_allclose(wire, direct, atol=1e-6)
    np.testing.assert_allclose(wire.sum(axis=-1), 1.0, atol=1e-4)


def test_malformed_lines_get_error_replies_and_loop_survives(model):
    good = dumps_line(req(5, "tokenize", text="still alive"))
    lines = run_serve(model, [
        "not json at all",
        '{"id": "nope", "kind": "tokenize", "text": "x"}',
        '{"id": 7, "kind": "frobnicate"}',
        '{"id": 8, "kind": "attention", "tokens": [1,2,3], "query_start": 0, "query_len": 9}',
        '{"id": 9, "kind": "attention", "tokens": [1,2,3], "layer": 77, "query_start": 0, "query_len": 1}',
        "",
        good,
    ])
    bodies = [json.loads(l) for l in lines[1:]]
    assert [b["id"] for b in bodies] == [-1, -1, 7, 8, 9, 5]
    assert all("error" in b for b in bodies[:5])
    assert bodies[0]["error"].startswith("bad json:")
    assert "tokens" in bodies[5]


def test_schema_violations_are_rejected(model):
    cases = [
        req(1, "attention", tokens=[]),                      # empty tokens
        req(2, "attention"),                                 # tokens null
        req(3, "tokenize"),                                  # text null
        req(4, "generate", tokens=[1], max_new_tokens=0),    # no budget
        req(5, "detokenize"),                                # tokens null
        req(6, "attention", tokens=[1, "a"], query_len=1),   # non-int token
        req(7, "attention", tokens=[1], layer=1.5, query_len=1),
        req(8, "attention", tokens=[1], query_len=-1),
        "[1, 2, 3]",                                         # not an object
    ]
    lines = run_serve(model, [
        c if isinstance(c, str) else dumps_line(c) for c in cases])
    bodies = [json.loads(l) for l in lines[1:]]
    assert all("error" in b for b in bodies)
    assert [b["id"] for b in bodies[:-1]] == [1, 2, 3, 4, 5, 6, 7, 8]
    assert bodies[-1]["id"] == -1


def test_window_violation_mentions_window(model):
    over = req(3, "attention", tokens=[1] * (model.max_window + 5), query_len=1)
    lines = run_serve(model, [dumps_line(over)])
    body = json.loads(lines[1])
    assert body["id"] == 3 and "window" in body["error"]


def test_serialization_is_sorted_compact_ascii(model):
    lines = run_serve(model, [dumps_line(req(1, "tokenize", text="café"))])
    for line in lines:
        assert line == dumps_line(json.loads(line))
        assert line.isascii()


def test_replies_are_byte_stable_across_runs(model):
    requests = [
        dumps_line(req(1, "tokenize", text="stability")),
        dumps_line(req(2, "attention", tokens=model.encode("stability"),
                       query_start=0, query_len=2)),
        dumps_line(req(3, "generate", tokens=model.encode("stability"),
                       max_new_tokens=2)),
    ]
    assert run_serve(model, requests) == run_serve(model, requests)


def test_decode_attention_payload_checks_length():
    with pytest.raises(ValueError):
        decode_attention_payload(
            {"heads": 2, "rows": 2, "cols": 3, "data_b64": "AAAA"})
