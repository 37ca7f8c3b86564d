"""Adapter that serves a real transformer checkpoint over the retrieval
engine's stdio wire protocol.

The engine side stays model-agnostic; this package owns everything
checkpoint-shaped: loading, tokenization, per-layer attention extraction,
and greedy generation. Launch with ``adapter --model <name> --device cpu``.
"""

from .checkpoint import CheckpointModel, WindowExceeded
from .server import dumps_line, serve
from .tiny import materialize_tiny_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CheckpointModel",
    "WindowExceeded",
    "dumps_line",
    "serve",
    "materialize_tiny_checkpoint",
]
