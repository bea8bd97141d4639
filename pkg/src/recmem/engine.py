"""The per-conversation memory engine.

Each ingested turn goes: subconscious store -> merge-first check against the
nearest episode -> recurrence trigger -> consolidation -> semantic
refinement of every new episode. ``mode="eager"`` instead consolidates every
turn on its own, which is the cost baseline recurrence is measured against.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .encoder import Encoder, EncoderConfig
from .episodic import Episode, EpisodicMemory
from .errors import (
    ConcurrentIngest,
    LlmFailure,
    MalformedLlmOutput,
    RemoteUnavailable,
    SnapshotIoError,
    VersionMismatch,
)
from .llm import LLMBackend, LlmRequest, RemoteLLM, StubLLM, TokenLedger, TokenUsage
from .prompts import load_templates
from .qa import RetrievalBudget, RetrievedContext, build_answer_request, retrieve
from .semantic import DEFAULT_CONTEXT_K, SemanticFact, SemanticMemory
from .subconscious import ConsolidationConfig, InteractionUnit, SubconsciousStore, SubconsciousUnit

logger = logging.getLogger(__name__)

MODES = ("recurrence", "eager", "direct-extraction")
SNAPSHOT_FORMAT_VERSION = 1
SNAPSHOT_FILES = ("subconscious.jsonl", "episodes.jsonl", "facts.jsonl", "config.json", "ledger.json")

_RECOVERABLE = (LlmFailure, MalformedLlmOutput, RemoteUnavailable)


@dataclass
class LlmConfig:
    backend: str = "stub"  # "stub" | "remote"
    model_name: str = "gpt-4o-mini"
    endpoint_url: str = "https://api.openai.com/v1"
    retries: int = 3
    backoff: float = 1.0
    timeout: float = 60.0


@dataclass
class EngineConfig:
    consolidation: ConsolidationConfig = field(default_factory=ConsolidationConfig)
    retrieval: RetrievalBudget = field(default_factory=RetrievalBudget)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    mode: str = "recurrence"
    prompts_dir: Optional[str] = None
    snapshot_dir: Optional[str] = None
    refine_context_k: int = DEFAULT_CONTEXT_K

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        retrieval = dict(d.pop("retrieval", {}) or {})
        return cls(
            consolidation=ConsolidationConfig(**(d.pop("consolidation", {}) or {})),
            retrieval=RetrievalBudget(**retrieval),
            encoder=EncoderConfig(**(d.pop("encoder", {}) or {})),
            llm=LlmConfig(**(d.pop("llm", {}) or {})),
            **d,
        )


def make_backend(cfg: LlmConfig) -> LLMBackend:
    if cfg.backend == "stub":
        return StubLLM()
    if cfg.backend == "remote":
        return RemoteLLM(cfg.model_name, cfg.endpoint_url, cfg.retries, cfg.backoff, cfg.timeout)
    raise ValueError(f"unknown llm backend {cfg.backend!r}")


@dataclass
class TurnOutcome:
    turn_id: str
    merged_into: Optional[str] = None
    triggered: bool = False
    episodes: list[str] = field(default_factory=list)
    facts: list[str] = field(default_factory=list)
    superseded: list[str] = field(default_factory=list)
    failures: int = 0


@dataclass
class IngestSummary:
    conversation_id: str
    turns: int = 0
    merges: int = 0
    consolidations: int = 0
    episodes: int = 0
    refinements: int = 0
    facts: int = 0
    superseded: int = 0
    failures: int = 0
    construction_usage: TokenUsage = field(default_factory=TokenUsage)
    trigger_turns: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["construction_usage"] = {**self.construction_usage.as_dict(), "total": self.construction_usage.total}
        return d


@dataclass
class AnswerResult:
    question_id: str
    question: str
    text: str
    context: RetrievedContext
    usage: TokenUsage


class RecMemEngine:
    """Memory state for one conversation."""

    def __init__(self, config: Optional[EngineConfig] = None, conversation_id: str = "default",
                 backend: Optional[LLMBackend] = None, encoder: Optional[Encoder] = None,
                 ledger: Optional[TokenLedger] = None):
        self.config = config or EngineConfig()
        self.conversation_id = conversation_id
        self.backend = backend or make_backend(self.config.llm)
        self.encoder = encoder or Encoder(self.config.encoder)
        self.ledger = ledger or TokenLedger()
        self.ledger.register(conversation_id)
        self.templates = load_templates(self.config.prompts_dir)
        self.subconscious = SubconsciousStore(self.encoder)
        self.episodic = EpisodicMemory(self.encoder, self.subconscious, self.templates, self._construction_call)
        self.semantic = SemanticMemory(
            self.encoder, self.templates, self._construction_call,
            context_k=self.config.refine_context_k,
            direct_extraction=self.config.mode == "direct-extraction",
        )
        self.summary = IngestSummary(conversation_id)
        self._ingest_lock = threading.Lock()

    # -- LLM plumbing -------------------------------------------------------

    def _construction_call(self, req: LlmRequest) -> str:
        return self.ledger.call(self.backend, req, self.conversation_id)

    # -- ingestion ----------------------------------------------------------

    def ingest(self, u: InteractionUnit) -> TurnOutcome:
        if not self._ingest_lock.acquire(blocking=False):
            raise ConcurrentIngest(f"conversation {self.conversation_id} is already ingesting")
        try:
            out = self._ingest(u)
        finally:
            self._ingest_lock.release()
        self.summary.turns += 1
        self.summary.failures += out.failures
        self.summary.construction_usage = self.ledger.construction_total(self.conversation_id)
        return out

    def ingest_many(self, units: Iterable[InteractionUnit]) -> IngestSummary:
        for u in units:
            self.ingest(u)
        return self.summary

    def _ingest(self, u: InteractionUnit) -> TurnOutcome:
        cfg = self.config.consolidation
        s = self.subconscious.store(u)
        out = TurnOutcome(u.turn_id)

        if self.config.mode == "eager":
            self._consolidate([s], u.timestamp, out)
            return out

        try:
            merged = self.episodic.try_merge(s, cfg)
        except _RECOVERABLE as exc:
            logger.warning("merge failed for turn %s: %s", u.turn_id, exc)
            out.failures += 1
            return out
        if merged is not None:
            out.merged_into = merged.episode_id
            self.summary.merges += 1
            return out

        relevant = self.subconscious.relevant_set(s, cfg)
        if self.subconscious.should_consolidate(relevant, cfg):
            out.triggered = True
            self._consolidate(relevant, u.timestamp, out)
        return out

    def _consolidate(self, cluster: list[SubconsciousUnit], now: str, out: TurnOutcome) -> None:
        self.summary.trigger_turns.append(out.turn_id)
        try:
            episodes = self.episodic.consolidate(cluster, created_at=now)
        except _RECOVERABLE as exc:
            logger.warning("consolidation at turn %s failed: %s", out.turn_id, exc)
            out.failures += 1
            return
        self.summary.consolidations += 1
        self.summary.episodes += len(episodes)
        units = [s.unit for s in cluster]
        for ep in episodes:
            out.episodes.append(ep.episode_id)
            try:
                res = self.semantic.refine(ep, units)
            except _RECOVERABLE as exc:
                # the episode stands; refinement is not retried
                logger.warning("refinement of %s failed: %s", ep.episode_id, exc)
                out.failures += 1
                continue
            self.summary.refinements += 1
            self.summary.facts += len(res.new_facts)
            self.summary.superseded += len(res.supersedes)
            out.facts.extend(f.fact_id for f in res.new_facts)
            out.superseded.extend(res.supersedes)

    # -- querying -----------------------------------------------------------

    def retrieve(self, question: str, budget: Optional[RetrievalBudget] = None) -> RetrievedContext:
        return retrieve(question, budget or self.config.retrieval, self.encoder,
                        self.subconscious, self.episodic, self.semantic)

    def answer(self, question: str, question_id: str = "q", budget: Optional[RetrievalBudget] = None) -> AnswerResult:
        ctx = self.retrieve(question, budget)
        req = build_answer_request(question, ctx, self.templates["answer"])
        text, usage = self.backend.complete(req)
        self.ledger.record(self.conversation_id, "answer", usage, question_id=question_id)
        return AnswerResult(question_id, question, text, ctx, usage)

    def report(self) -> dict:
        return self.ledger.report(self.conversation_id)

    # -- persistence --------------------------------------------------------

    def snapshot(self, directory: str | Path) -> Path:
        d = Path(directory)
        try:
            d.mkdir(parents=True, exist_ok=True)
            _write_jsonl(d / "subconscious.jsonl", (
                {**s.unit.to_json(), "consolidated": s.consolidated,
                 "episode_refs": list(s.episode_refs), "vector": s.vector.tolist()}
                for s in self.subconscious.units()
            ))
            _write_jsonl(d / "episodes.jsonl", (e.to_json() for e in self.episodic.episodes()))
            _write_jsonl(d / "facts.jsonl", (f.to_json() for f in self.semantic.facts()))
            _write_json(d / "config.json", {
                "format_version": SNAPSHOT_FORMAT_VERSION,
                "conversation_id": self.conversation_id,
                "config": self.config.to_json(),
                "summary": self.summary.to_json(),
            })
            ledger = self.ledger.to_json()
            _write_json(d / "ledger.json", {self.conversation_id: ledger[self.conversation_id]})
        except OSError as exc:
            raise SnapshotIoError(f"cannot write snapshot to {d}: {exc}") from exc
        return d

    @classmethod
    def restore(cls, directory: str | Path, backend: Optional[LLMBackend] = None,
                encoder: Optional[Encoder] = None, config: Optional[EngineConfig] = None) -> "RecMemEngine":
        d = Path(directory)
        missing = [n for n in SNAPSHOT_FILES if not (d / n).is_file()]
        if missing:
            raise SnapshotIoError(f"{d} is not a snapshot (missing {', '.join(missing)})")
        try:
            meta = json.loads((d / "config.json").read_text(encoding="utf-8"))
            if meta.get("format_version") != SNAPSHOT_FORMAT_VERSION:
                raise VersionMismatch(
                    f"snapshot format {meta.get('format_version')!r}, expected {SNAPSHOT_FORMAT_VERSION}")
            ledger = TokenLedger.from_json(json.loads((d / "ledger.json").read_text(encoding="utf-8")))
            eng = cls(config or EngineConfig.from_json(meta["config"]), meta["conversation_id"],
                      backend=backend, encoder=encoder, ledger=ledger)
            for row in _read_jsonl(d / "subconscious.jsonl"):
                eng.subconscious.restore_unit(SubconsciousUnit(
                    InteractionUnit.from_json(row),
                    _vec(row["vector"]),
                    list(row["episode_refs"]),
                ))
            for row in _read_jsonl(d / "episodes.jsonl"):
                eng.episodic.restore_episode(Episode.from_json(row))
            for row in _read_jsonl(d / "facts.jsonl"):
                eng.semantic.restore_fact(SemanticFact.from_json(row))
        except OSError as exc:
            raise SnapshotIoError(f"cannot read snapshot {d}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotIoError(f"corrupt snapshot {d}: {exc}") from exc
        s = meta.get("summary")
        if s:
            usage = s.pop("construction_usage")
            usage.pop("total", None)
            eng.summary = IngestSummary(**{**s, "construction_usage": TokenUsage(**usage)})
        return eng


def _vec(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def _read_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
