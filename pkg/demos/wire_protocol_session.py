#!/usr/bin/env python3
"""Speak the provider wire protocol by hand, then via the client class.

An adapter is any process that prints a handshake line and then answers one
JSON request per line on stdio. Part 1 spawns one and exchanges raw NDJSON so
every byte is visible. Part 2 drives the same adapter through ProtocolClient
and runs the full retrieval loop across the process boundary.

Run: python3 demos/wire_protocol_session.py
"""

import json
import subprocess
import sys

from infiniretri import PipelineConfig, ProtocolClient, run

NEEDLE = "The relay password is harbor lantern six."
SERVE_CMD = (f"{sys.executable} -m infiniretri provider serve "
             f"--provider oracle --plant '{NEEDLE}'")


def raw_session() -> None:
    print("== raw NDJSON exchange ==")
    proc = subprocess.Popen(SERVE_CMD, shell=True, stdin=subprocess.PIPE,
                            stdout=subprocess.PIPE)
    assert proc.stdin and proc.stdout

    handshake = proc.stdout.readline().decode().strip()
    print(f"<- {handshake}")

    def ask(request: dict) -> dict:
        line = json.dumps(request, sort_keys=True, separators=(",", ":"))
        print(f"-> {line}")
        proc.stdin.write(line.encode() + b"\n")
        proc.stdin.flush()
        reply = proc.stdout.readline().decode().strip()
        shown = reply if len(reply) < 120 else reply[:117] + "..."
        print(f"<- {shown}")
        return json.loads(reply)

    base = {"tokens": None, "text": None, "layer": "last",
            "query_start": 0, "query_len": 0, "max_new_tokens": 1}
    toks = ask({**base, "id": 1, "kind": "tokenize", "text": "The relay hums."})
    ask({**base, "id": 2, "kind": "detokenize", "tokens": toks["tokens"]})
    ask({**base, "id": 3, "kind": "attention", "tokens": toks["tokens"],
         "query_start": len(toks["tokens"]) - 2, "query_len": 2})
    # malformed on purpose: the reply is an error envelope, the session survives
    ask({**base, "id": 4, "kind": "attention", "tokens": None})

    proc.stdin.close()
    proc.wait(timeout=10)
    print()


def client_session() -> None:
    print("== retrieval through ProtocolClient ==")
    client = ProtocolClient(SERVE_CMD)
    print(f"handshake: {client.handshake}")

    filler = " ".join(f"Routine log entry number {i} reports nothing unusual."
                      for i in range(40))
    document = f"{filler} {NEEDLE} {filler}"
    trace = run(client, document, "What is the relay password?",
                PipelineConfig(chunk_size=256, top_k=20, phrase_token_num=5,
                               max_new_tokens=64))
    client.close()

    print(f"document: {trace.document_tokens} tokens in {trace.chunk_count} chunks")
    print(f"peak bytes on the wire per step: {trace.max_merged_tokens} tokens")
    print(f"answer: {trace.answer_text!r}")


if __name__ == "__main__":
    raw_session()
    client_session()
