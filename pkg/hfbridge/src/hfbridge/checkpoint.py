"""Thin wrapper around a causal-LM checkpoint.

Attention is whatever the checkpoint library reports post-softmax (the model
is loaded with the eager attention implementation so the matrices are
actually materialized). Grouped-query checkpoints therefore report one
matrix per *query* head; the handshake's head count reflects that.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


class WindowExceeded(RuntimeError):
    """Input longer than the checkpoint's position window."""


class CheckpointModel:
    """Loads a checkpoint once and answers the four protocol operations."""

    def __init__(self, model_path: str, device: str = "cpu") -> None:
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModelForCausalLM.from_pretrained(
            model_path, attn_implementation="eager")
        self.device = torch.device(device)
        self.model.to(self.device)
        self.model.eval()

        cfg = self.model.config
        self.vocab_size = int(cfg.vocab_size)
        self.layers = int(cfg.num_hidden_layers)
        self.max_window = int(cfg.max_position_embeddings)
        self.heads = int(cfg.num_attention_heads)
        self.eos_id = self.tokenizer.eos_token_id

    # -- protocol operations ------------------------------------------------

    def encode(self, text: str) -> list[int]:
        return [int(t) for t in self.tokenizer.encode(text, add_special_tokens=False)]

    def decode(self, tokens: Sequence[int]) -> str:
        return self.tokenizer.decode([int(t) for t in tokens], skip_special_tokens=True)

    def resolve_layer(self, layer: int | str) -> int:
        if layer == "last":
            return self.layers - 1
        li = int(layer)
        if not 0 <= li < self.layers:
            raise ValueError(f"layer {li} out of range for {self.layers} layers")
        return li

    def attention(self, tokens: Sequence[int], layer: int | str,
                  query_start: int, query_len: int) -> np.ndarray:
        """Post-softmax attention rows for the query slice at one layer,
        shaped (heads, query_len, len(tokens)) float32."""
        n = len(tokens)
        if n == 0:
            raise ValueError("attention needs at least one token")
        if n > self.max_window:
            raise WindowExceeded(f"input of {n} tokens exceeds window {self.max_window}")
        if query_len < 1 or query_start < 0 or query_start + query_len > n:
            raise ValueError(
                f"query range [{query_start}, {query_start + query_len}) outside "
                f"input of {n} tokens")
        ids = torch.tensor([list(tokens)], dtype=torch.long, device=self.device)
        with torch.no_grad():
            out = self.model(ids, output_attentions=True)
        li = self.resolve_layer(layer)
        block = out.attentions[li][0, :, query_start:query_start + query_len, :]
        return block.to(torch.float32).cpu().numpy()

    def generate(self, tokens: Sequence[int], max_new_tokens: int) -> list[int]:
        """Greedy decoding; the end-of-sequence token, if produced, is kept
        and stops the loop. Stops at the window edge regardless."""
        if max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {max_new_tokens}")
        seq = [int(t) for t in tokens]
        if len(seq) > self.max_window:
            raise WindowExceeded(
                f"prompt of {len(seq)} tokens exceeds window {self.max_window}")
        out: list[int] = []
        with torch.no_grad():
            while len(out) < max_new_tokens and len(seq) < self.max_window:
                ids = torch.tensor([seq], dtype=torch.long, device=self.device)
                logits = self.model(ids).logits[0, -1]
                nxt = int(torch.argmax(logits).item())
                out.append(nxt)
                seq.append(nxt)
                if self.eos_id is not None and nxt == self.eos_id:
                    break
        return out
