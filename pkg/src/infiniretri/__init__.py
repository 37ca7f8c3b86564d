"""Attention-guided retrieval over unbounded documents with bounded windows.

The engine reads a document one chunk at a time, watches where the question's
attention lands, keeps the covering sentences in an external cache, and
answers from that cache -- so any single model call stays within a fixed
window no matter how long the document grows.
"""

from .attention import AttentionTensor, aggregate_heads, attention_scores, stack_heads
from .cache import CacheState, MergedInput, merge, read_snapshot, snapshot, update
from .errors import (ConfigurationError, ProtocolError, UnsupportedModeError,
                     WindowExceededError)
from .pipeline import IterationRecord, PipelineConfig, RunTrace, answer_from_cache, run
from .protocol import ProtocolClient, ProviderRequest, serve
from .providers import PlantedOracle, PlantedOracleSpec, Provider, ToyProvider
from .retrieval import (expand_to_sentences, phrase_importance, select_top_k,
                        token_importance)
from .textseg import Chunk, Sentence, build_chunks, segment_sentences
from .tokenizer import ByteTokenizer
from .toymodel import ToyModel, ToyModelSpec

__version__ = "0.1.0"

__all__ = [
    "AttentionTensor", "aggregate_heads", "attention_scores", "stack_heads",
    "CacheState", "MergedInput", "merge", "update", "snapshot", "read_snapshot",
    "ConfigurationError", "WindowExceededError", "ProtocolError", "UnsupportedModeError",
    "PipelineConfig", "RunTrace", "IterationRecord", "run", "answer_from_cache",
    "ProtocolClient", "ProviderRequest", "serve",
    "Provider", "ToyProvider", "PlantedOracle", "PlantedOracleSpec",
    "phrase_importance", "token_importance", "select_top_k", "expand_to_sentences",
    "Sentence", "Chunk", "segment_sentences", "build_chunks",
    "ByteTokenizer", "ToyModel", "ToyModelSpec",
    "__version__",
]
