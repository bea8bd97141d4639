"""Semantic memory built by refining each freshly consolidated episode."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .encoder import Encoder
from .episodic import Episode, LlmCall, fmt_unit, render_units
from .errors import MalformedLlmOutput, UnknownId
from .index import VectorIndex
from .llm import LlmRequest, parse_json_output
from .prompts import PromptTemplate
from .subconscious import InteractionUnit

logger = logging.getLogger(__name__)

DEFAULT_CONTEXT_K = 10


@dataclass(eq=False)
class SemanticFact:
    fact_id: str
    text: str
    vector: np.ndarray
    source_episode_id: str
    source_turn_ids: list[str]
    created_at: str
    superseded_by: Optional[str] = None

    @property
    def live(self) -> bool:
        return self.superseded_by is None

    def to_json(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "text": self.text,
            "source_episode_id": self.source_episode_id,
            "source_turn_ids": list(self.source_turn_ids),
            "created_at": self.created_at,
            "superseded_by": self.superseded_by,
            "vector": self.vector.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SemanticFact":
        return cls(
            fact_id=d["fact_id"],
            text=d["text"],
            vector=np.asarray(d["vector"], dtype=np.float64),
            source_episode_id=d["source_episode_id"],
            source_turn_ids=list(d["source_turn_ids"]),
            created_at=d["created_at"],
            superseded_by=d.get("superseded_by"),
        )


@dataclass
class RefinementResult:
    new_facts: list[SemanticFact] = field(default_factory=list)
    supersedes: list[str] = field(default_factory=list)


def _clean(text: str) -> str:
    return " ".join(text.split())


class SemanticMemory:
    def __init__(self, encoder: Encoder, templates: dict[str, PromptTemplate], llm: LlmCall,
                 context_k: int = DEFAULT_CONTEXT_K, direct_extraction: bool = False):
        self.encoder = encoder
        self.templates = templates
        self.llm = llm
        self.context_k = context_k
        self.direct_extraction = direct_extraction
        self.index = VectorIndex(encoder.dim)  # live facts only
        self._facts: dict[str, SemanticFact] = {}
        self._next_id = 1

    def __len__(self) -> int:
        return len(self._facts)

    def get(self, fact_id: str) -> SemanticFact:
        try:
            return self._facts[fact_id]
        except KeyError:
            raise UnknownId(fact_id) from None

    def facts(self, live_only: bool = False) -> list[SemanticFact]:
        return [f for f in self._facts.values() if f.live or not live_only]

    def search(self, q: np.ndarray, k: int) -> list[tuple[SemanticFact, float]]:
        if k <= 0:
            return []
        return [(self._facts[h.id], h.score) for h in self.index.top_k(q, k)]

    def retrieve_context_facts(self, e: Episode, k: Optional[int] = None) -> list[SemanticFact]:
        k = self.context_k if k is None else k
        return [f for f, _ in self.search(e.vector, k)]

    def refine(self, e: Episode, cluster: list[InteractionUnit],
               context: Optional[list[SemanticFact]] = None) -> RefinementResult:
        """One refinement call for a new episode; applies facts and supersessions.

        On a failed or malformed call nothing is written.
        """
        if context is None:
            context = self.retrieve_context_facts(e)
        units = sorted(cluster, key=lambda u: u.sort_key())
        context_text = "\n".join(f"{f.fact_id}: {f.text}" for f in context) or "(none)"
        if self.direct_extraction:
            system, prompt = self.templates["refine_direct"].render(
                units=render_units(units), context=context_text)
        else:
            system, prompt = self.templates["refine"].render(
                episode=e.text(), units=render_units(units), context=context_text)
        req = LlmRequest("refine", prompt, system=system, inputs={
            "episode": "" if self.direct_extraction else e.text(),
            "units": [{"turn_id": u.turn_id, "text": fmt_unit(u)} for u in units],
            "context": [{"fact_id": f.fact_id, "text": f.text} for f in context],
        })
        proposed, supersede_ids = self._parse(self.llm(req), [u.turn_id for u in units])

        supersede = []
        for fid in supersede_ids:
            f = self._facts.get(fid)
            if f is None:
                logger.warning("refinement asked to supersede unknown fact %s; ignored", fid)
            elif not f.live:
                logger.warning("fact %s is already superseded; ignored", fid)
            elif fid not in supersede:
                supersede.append(fid)

        retiring = set(supersede)
        live_texts = {f.text for f in self._facts.values() if f.live and f.fact_id not in retiring}
        live_texts |= {f.text for f in context if f.fact_id not in retiring}
        drafts = []
        for text, ids in proposed:
            if text in live_texts:
                continue
            live_texts.add(text)
            drafts.append((text, ids, self.encoder.encode(text)))

        if supersede and not drafts:
            logger.warning("supersession of %s proposed without a replacement fact; ignored", supersede)
            supersede = []

        result = RefinementResult()
        for text, ids, vec in drafts:
            fact = SemanticFact(
                fact_id=f"fact-{self._next_id:04d}",
                text=text,
                vector=vec,
                source_episode_id=e.episode_id,
                source_turn_ids=ids,
                created_at=e.created_at,
            )
            self._next_id += 1
            self._facts[fact.fact_id] = fact
            self.index.insert(fact.fact_id, vec)
            result.new_facts.append(fact)

        for fid in supersede:
            old = self._facts[fid]
            successor = max(result.new_facts, key=lambda n: float(np.dot(n.vector, old.vector)))
            old.superseded_by = successor.fact_id
            self.index.remove(fid)
            result.supersedes.append(fid)
        return result

    @staticmethod
    def _parse(text: str, cluster_ids: list[str]) -> tuple[list[tuple[str, list[str]]], list[str]]:
        try:
            data = parse_json_output(text)
        except ValueError as exc:
            raise MalformedLlmOutput(f"refinement output is not JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise MalformedLlmOutput("refinement output must be a JSON object")
        facts = data.get("facts", [])
        supersedes = data.get("supersedes", [])
        if not isinstance(facts, list) or not isinstance(supersedes, list):
            raise MalformedLlmOutput("'facts' and 'supersedes' must be arrays")
        allowed = set(cluster_ids)
        out = []
        for item in facts:
            if isinstance(item, str):
                item = {"text": item}
            if not isinstance(item, dict) or not isinstance(item.get("text"), str):
                raise MalformedLlmOutput("each fact needs a string 'text'")
            text = _clean(item["text"])
            if not text:
                continue
            ids = [str(t) for t in item.get("source_turn_ids") or [] if str(t) in allowed]
            out.append((text, list(dict.fromkeys(ids)) or list(cluster_ids)))
        return out, [str(s) for s in supersedes]

    def restore_fact(self, f: SemanticFact) -> None:
        self._facts[f.fact_id] = f
        if f.live:
            self.index.insert(f.fact_id, f.vector)
        n = int(f.fact_id.rsplit("-", 1)[-1]) if f.fact_id.startswith("fact-") else 0
        self._next_id = max(self._next_id, n + 1)
