"""Episodic memory: merge-first updates and recurrence-triggered consolidation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .encoder import Encoder
from .errors import MalformedLlmOutput, UnknownId
from .index import ScoredHit, VectorIndex
from .llm import LlmRequest, parse_json_output
from .prompts import PromptTemplate
from .subconscious import (
    ConsolidationConfig,
    InteractionUnit,
    SubconsciousStore,
    SubconsciousUnit,
)

logger = logging.getLogger(__name__)

LlmCall = Callable[[LlmRequest], str]


def fmt_unit(u: InteractionUnit) -> str:
    return f"[{u.timestamp}] USER: {u.user_message}\nASSISTANT: {u.assistant_message}"


def render_units(units: list[InteractionUnit]) -> str:
    return "\n\n".join(f"(turn {u.turn_id})\n{fmt_unit(u)}" for u in units)


@dataclass(eq=False)
class Episode:
    episode_id: str
    title: str
    narrative: str
    vector: np.ndarray
    source_turn_ids: list[str]
    time_span: tuple[str, str]
    created_at: str
    revision: int = 1

    def text(self) -> str:
        return f"{self.title}\n{self.narrative}" if self.title else self.narrative

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "title": self.title,
            "narrative": self.narrative,
            "source_turn_ids": list(self.source_turn_ids),
            "time_span": list(self.time_span),
            "revision": self.revision,
            "created_at": self.created_at,
            "vector": self.vector.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Episode":
        return cls(
            episode_id=d["episode_id"],
            title=d["title"],
            narrative=d["narrative"],
            vector=np.asarray(d["vector"], dtype=np.float64),
            source_turn_ids=list(d["source_turn_ids"]),
            time_span=(d["time_span"][0], d["time_span"][1]),
            created_at=d["created_at"],
            revision=d["revision"],
        )


def _span(units: list[InteractionUnit]) -> tuple[str, str]:
    ordered = sorted(units, key=lambda u: u.sort_key())
    return ordered[0].timestamp, ordered[-1].timestamp


@dataclass
class _Draft:
    title: str
    narrative: str
    source_turn_ids: list[str] = field(default_factory=list)


class EpisodicMemory:
    def __init__(self, encoder: Encoder, subconscious: SubconsciousStore,
                 templates: dict[str, PromptTemplate], llm: LlmCall):
        self.encoder = encoder
        self.subconscious = subconscious
        self.templates = templates
        self.llm = llm
        self.index = VectorIndex(encoder.dim)
        self._episodes: dict[str, Episode] = {}
        self._next_id = 1

    def __len__(self) -> int:
        return len(self._episodes)

    def get(self, episode_id: str) -> Episode:
        try:
            return self._episodes[episode_id]
        except KeyError:
            raise UnknownId(episode_id) from None

    def episodes(self) -> list[Episode]:
        """Episodes in index order (creation order, re-ordered by merges)."""
        return [self._episodes[i] for i in self.index.ids()]

    def search(self, q: np.ndarray, k: int) -> list[tuple[Episode, float]]:
        if k <= 0:
            return []
        return [(self._episodes[h.id], h.score) for h in self.index.top_k(q, k)]

    def nearest(self, s: SubconsciousUnit) -> Optional[ScoredHit]:
        hits = self.index.top_k(s.vector, 1) if len(self.index) else []
        return hits[0] if hits else None

    def try_merge(self, s: SubconsciousUnit, cfg: ConsolidationConfig) -> Optional[Episode]:
        """Fold ``s`` into its nearest episode when close enough; else None without any LLM call."""
        hit = self.nearest(s)
        if hit is None or hit.score < cfg.theta_sim:
            return None
        ep = self._episodes[hit.id]
        u = s.unit
        system, prompt = self.templates["merge"].render(
            title=ep.title,
            narrative=ep.narrative,
            time_span=f"{ep.time_span[0]} to {ep.time_span[1]}",
            unit=f"(turn {u.turn_id})\n{fmt_unit(u)}",
        )
        req = LlmRequest("merge", prompt, system=system, inputs={
            "narrative": ep.narrative, "turn_id": u.turn_id, "unit_text": fmt_unit(u),
        })
        out = self.llm(req)
        try:
            data = parse_json_output(out)
            narrative = data["narrative"]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedLlmOutput(f"merge output for {ep.episode_id}: {exc}") from exc
        if not isinstance(narrative, str) or not narrative.strip():
            raise MalformedLlmOutput(f"merge output for {ep.episode_id} has an empty narrative")

        title = ep.title
        vec = self.encoder.encode(f"{title}\n{narrative}" if title else narrative)
        units = [self.subconscious.get(t).unit for t in ep.source_turn_ids] + [u]

        self.index.remove(ep.episode_id)
        self.index.insert(ep.episode_id, vec)
        ep.narrative = narrative
        ep.vector = vec
        ep.source_turn_ids.append(u.turn_id)
        ep.time_span = _span(units)
        ep.revision += 1
        self.subconscious.mark_consolidated([u.turn_id], ep.episode_id)
        return ep

    def consolidate(self, cluster: list[SubconsciousUnit], created_at: str) -> list[Episode]:
        """Turn a triggered cluster into one or more new episodes.

        All parsing and encoding happens before any store is touched, so a
        failed or malformed call leaves the memory exactly as it was.
        """
        if not cluster:
            raise ValueError("empty cluster")
        units = sorted((s.unit for s in cluster), key=lambda u: u.sort_key())
        system, prompt = self.templates["consolidate"].render(units=render_units(units))
        req = LlmRequest("consolidate", prompt, system=system, inputs={
            "units": [{"turn_id": u.turn_id, "user": u.user_message, "text": fmt_unit(u)} for u in units],
        })
        drafts = self._parse_consolidation(self.llm(req), [u.turn_id for u in units])

        by_id = {u.turn_id: u for u in units}
        built = []
        for d in drafts:
            vec = self.encoder.encode(f"{d.title}\n{d.narrative}" if d.title else d.narrative)
            src = [by_id[t] for t in d.source_turn_ids] or units
            built.append((d, vec, _span(src)))

        out = []
        for d, vec, span in built:
            ep = Episode(
                episode_id=f"ep-{self._next_id:04d}",
                title=d.title,
                narrative=d.narrative,
                vector=vec,
                source_turn_ids=list(d.source_turn_ids),
                time_span=span,
                created_at=created_at,
            )
            self._next_id += 1
            self.index.insert(ep.episode_id, vec)
            self._episodes[ep.episode_id] = ep
            if ep.source_turn_ids:
                self.subconscious.mark_consolidated(ep.source_turn_ids, ep.episode_id)
            out.append(ep)
        return out

    @staticmethod
    def _parse_consolidation(text: str, cluster_ids: list[str]) -> list[_Draft]:
        try:
            data = parse_json_output(text)
        except ValueError as exc:
            raise MalformedLlmOutput(f"consolidation output is not JSON: {exc}") from exc
        if isinstance(data, dict) and isinstance(data.get("episodes"), list):
            data = data["episodes"]
        if not isinstance(data, list) or not data:
            raise MalformedLlmOutput("consolidation output must be a non-empty JSON array")

        allowed = set(cluster_ids)
        seen: set[str] = set()
        drafts = []
        for item in data:
            if not isinstance(item, dict):
                raise MalformedLlmOutput("episode entries must be objects")
            narrative = item.get("narrative")
            title = item.get("title", "")
            ids = item.get("source_turn_ids", [])
            if not isinstance(narrative, str) or not narrative.strip():
                raise MalformedLlmOutput("episode narrative must be a non-empty string")
            if not isinstance(title, str) or not isinstance(ids, list):
                raise MalformedLlmOutput("episode title must be a string and source_turn_ids a list")
            kept = []
            for t in ids:
                t = str(t)
                if t not in allowed:
                    logger.warning("consolidation cited turn %s outside the cluster; ignored", t)
                elif t not in seen:
                    seen.add(t)
                    kept.append(t)
            drafts.append(_Draft(title.strip(), narrative.strip(), kept))

        missing = [t for t in cluster_ids if t not in seen]
        if missing:
            drafts[0].source_turn_ids.extend(missing)
        return drafts

    def restore_episode(self, ep: Episode) -> None:
        self.index.insert(ep.episode_id, ep.vector)
        self._episodes[ep.episode_id] = ep
        n = int(ep.episode_id.rsplit("-", 1)[-1]) if ep.episode_id.startswith("ep-") else 0
        self._next_id = max(self._next_id, n + 1)
