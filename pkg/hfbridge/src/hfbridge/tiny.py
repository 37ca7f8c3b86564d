"""Materialize a tiny randomly-initialized GPT-2-style checkpoint.

The checkpoint is small enough to forward on a laptop CPU in milliseconds but
goes through the exact same loading path as a real pretrained model: a
byte-level BPE tokenizer (lossless on arbitrary text) plus model weights and
config saved with ``save_pretrained``. Tests and demos run against it without
downloading anything.
"""

from __future__ import annotations

import os

_CORPUS = [
    "The quick brown fox jumps over the lazy dog.",
    "Pack my box with five dozen liquor jugs.",
    "How vexingly quick daft zebras jump!",
    "Sphinx of black quartz, judge my vow.",
    "The five boxing wizards jump quickly.",
    "A shepherd counts sheep beneath a copper moon.",
    "Numbers 0 1 2 3 4 5 6 7 8 9 repeat in ledgers.",
    "Rivers carve canyons over ten thousand patient years.",
    "The archivist files every report under seal.",
    "Cold machines hum in the basement of the library.",
]

EOS_TOKEN = "<|end|>"


def materialize_tiny_checkpoint(path: str, seed: int = 0) -> str:
    """Write a tiny checkpoint under ``path`` and return ``path``.

    The tokenizer is trained in-process on a fixed corpus; byte-level
    pre-tokenization guarantees any UTF-8 string round-trips exactly even
    though the corpus is tiny. Weights are random from ``seed`` -- the model
    speaks fluent noise, which is all the protocol plumbing needs.
    """
    import torch
    from tokenizers import Tokenizer, models, pre_tokenizers, decoders, trainers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    tok = Tokenizer(models.BPE(unk_token=None))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=384,
        special_tokens=[EOS_TOKEN],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tok.train_from_iterator(_CORPUS, trainer=trainer)

    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        eos_token=EOS_TOKEN,
        pad_token=EOS_TOKEN,
        model_max_length=512,
    )

    config = GPT2Config(
        vocab_size=fast.vocab_size,
        n_positions=512,
        n_embd=32,
        n_layer=2,
        n_head=2,
        n_inner=64,
        eos_token_id=fast.eos_token_id,
        bos_token_id=fast.eos_token_id,
    )
    torch.manual_seed(seed)
    model = GPT2LMHeadModel(config)

    os.makedirs(path, exist_ok=True)
    model.save_pretrained(path)
    fast.save_pretrained(path)
    return path
