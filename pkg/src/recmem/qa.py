"""Budgeted retrieval over the three stores and answer generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .encoder import Encoder
from .episodic import Episode, EpisodicMemory, LlmCall, fmt_unit
from .llm import LlmRequest
from .prompts import PromptTemplate
from .semantic import SemanticFact, SemanticMemory
from .subconscious import SubconsciousStore, SubconsciousUnit


@dataclass
class RetrievalBudget:
    """Per-store top-k caps. ``k_sem`` defaults to twice ``k_epi``."""

    k_sub: int = 10
    k_epi: int = 5
    k_sem: Optional[int] = None

    def __post_init__(self) -> None:
        if self.k_sem is None:
            self.k_sem = 2 * self.k_epi
        if min(self.k_sub, self.k_epi, self.k_sem) < 0:
            raise ValueError("budgets must be non-negative")

    @property
    def overridden(self) -> bool:
        return self.k_sem != 2 * self.k_epi

    def to_json(self) -> dict:
        return {"k_sub": self.k_sub, "k_epi": self.k_epi, "k_sem": self.k_sem}


@dataclass
class RetrievedContext:
    query_vector: np.ndarray
    sub_hits: list[tuple[SubconsciousUnit, float]] = field(default_factory=list)
    epi_hits: list[tuple[Episode, float]] = field(default_factory=list)
    sem_hits: list[tuple[SemanticFact, float]] = field(default_factory=list)
    budget_overridden: bool = False

    def summary(self) -> dict:
        """Ids and scores only; handy for comparisons and JSON output."""
        return {
            "sub": [(s.turn_id, score) for s, score in self.sub_hits],
            "epi": [(e.episode_id, score) for e, score in self.epi_hits],
            "sem": [(f.fact_id, score) for f, score in self.sem_hits],
            "budget_overridden": self.budget_overridden,
        }


def retrieve(question: str, budget: RetrievalBudget, encoder: Encoder, subconscious: SubconsciousStore,
             episodic: EpisodicMemory, semantic: SemanticMemory) -> RetrievedContext:
    q = encoder.encode(question)
    sub_hits = []
    if budget.k_sub > 0:
        sub_hits = [(subconscious.get(h.id), h.score) for h in subconscious.index.top_k(q, budget.k_sub)]
    return RetrievedContext(
        query_vector=q,
        sub_hits=sub_hits,
        epi_hits=episodic.search(q, budget.k_epi),
        sem_hits=semantic.search(q, budget.k_sem),
        budget_overridden=budget.overridden,
    )


def _section(lines: list[str]) -> str:
    return "\n".join(f"- {line}" for line in lines) if lines else "(empty)"


def build_answer_request(question: str, ctx: RetrievedContext, template: PromptTemplate) -> LlmRequest:
    semantic = [f.text for f, _ in ctx.sem_hits]
    episodic = [
        f"[{e.time_span[0]} to {e.time_span[1]}] {e.text()}".replace("\n", " ")
        for e, _ in ctx.epi_hits
    ]
    subconscious = [fmt_unit(s.unit).replace("\n", " ") for s, _ in ctx.sub_hits]
    system, prompt = template.render(
        semantic=_section(semantic),
        episodic=_section(episodic),
        subconscious=_section(subconscious),
        question=question,
    )
    return LlmRequest("answer", prompt, system=system, inputs={
        "semantic": semantic, "episodic": episodic, "subconscious": subconscious,
    })


def answer(question: str, ctx: RetrievedContext, template: PromptTemplate, llm: LlmCall) -> str:
    return llm(build_answer_request(question, ctx, template))
