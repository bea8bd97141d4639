"""Recurrence-triggered conversational memory.

Raw turns live in a cheap embedding-indexed store; an LLM is only asked to
build episodic narratives and semantic facts once a topic keeps coming back.
"""

from .encoder import Encoder, EncoderConfig
from .engine import EngineConfig, IngestSummary, LlmConfig, RecMemEngine
from .episodic import Episode, EpisodicMemory, fmt_unit
from .index import ScoredHit, VectorIndex
from .llm import LlmRequest, RemoteLLM, StubLLM, TokenLedger, TokenUsage
from .qa import RetrievalBudget, RetrievedContext
from .semantic import SemanticFact, SemanticMemory
from .subconscious import ConsolidationConfig, InteractionUnit, SubconsciousStore, SubconsciousUnit

__all__ = [
    "ConsolidationConfig",
    "Encoder",
    "EncoderConfig",
    "EngineConfig",
    "Episode",
    "EpisodicMemory",
    "IngestSummary",
    "InteractionUnit",
    "LlmConfig",
    "LlmRequest",
    "RecMemEngine",
    "RemoteLLM",
    "RetrievalBudget",
    "RetrievedContext",
    "ScoredHit",
    "SemanticFact",
    "SemanticMemory",
    "StubLLM",
    "SubconsciousStore",
    "SubconsciousUnit",
    "TokenLedger",
    "TokenUsage",
    "VectorIndex",
    "fmt_unit",
]
