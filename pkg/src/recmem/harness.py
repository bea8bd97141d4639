"""Streaming evaluation protocol: ingest a whole conversation, then ask its questions."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .datasets import ConversationRecord
from .engine import EngineConfig, IngestSummary, RecMemEngine
from .errors import LlmFailure, MalformedLlmOutput, RemoteUnavailable
from .llm import LLMBackend

logger = logging.getLogger(__name__)


@dataclass
class QuestionResult:
    question_id: str
    question: str
    answer: Optional[str]
    expected: Optional[str] = None
    category: Optional[str] = None
    usage: Optional[dict] = None
    error: Optional[str] = None


@dataclass
class ConversationRun:
    conversation_id: str
    mode: str
    summary: IngestSummary
    questions: list[QuestionResult] = field(default_factory=list)
    report: dict = field(default_factory=dict)
    engine: Optional[RecMemEngine] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "mode": self.mode,
            "summary": self.summary.to_json(),
            "questions": [dataclasses.asdict(q) for q in self.questions],
            "report": self.report,
        }


def run_ingest(record: ConversationRecord, cfg: EngineConfig,
               backend: Optional[LLMBackend] = None) -> RecMemEngine:
    """Stream every turn of ``record`` through a fresh engine, in order."""
    engine = RecMemEngine(cfg, record.conversation_id, backend=backend)
    for u in record.turns:
        engine.ingest(u)
    return engine


def run_questions(engine: RecMemEngine, record: ConversationRecord) -> tuple[list[QuestionResult], dict]:
    """Answer every question against an engine that has ingested all turns."""
    if engine.summary.turns < len(record.turns):
        raise RuntimeError("questions must wait until the whole conversation is ingested")
    results = []
    for q in record.questions:
        try:
            res = engine.answer(q.text, q.question_id)
        except (LlmFailure, MalformedLlmOutput, RemoteUnavailable) as exc:
            logger.warning("question %s failed: %s", q.question_id, exc)
            results.append(QuestionResult(q.question_id, q.text, None, q.expected, q.category, error=str(exc)))
            continue
        results.append(QuestionResult(
            q.question_id, q.text, res.text, q.expected, q.category,
            usage={**res.usage.as_dict(), "total": res.usage.total},
        ))
    return results, engine.report()


def run_conversation(record: ConversationRecord, cfg: EngineConfig,
                     backend: Optional[LLMBackend] = None, ask: bool = True) -> ConversationRun:
    engine = run_ingest(record, cfg, backend)
    questions, report = run_questions(engine, record) if ask else ([], engine.report())
    return ConversationRun(record.conversation_id, cfg.mode, engine.summary, questions, report, engine)


def run_all(records: Sequence[ConversationRecord], cfg: EngineConfig, workers: int = 1,
            backend_factory: Optional[Callable[[], LLMBackend]] = None,
            ask: bool = True) -> list[ConversationRun]:
    """One independent engine per conversation; results come back in input order."""

    def one(rec: ConversationRecord) -> ConversationRun:
        return run_conversation(rec, cfg, backend_factory() if backend_factory else None, ask)

    if workers <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, records))


def aggregate(runs: Sequence[ConversationRun]) -> dict:
    """Construction cost averaged per conversation, query cost per question."""
    n = len(runs)
    questions = [q for r in runs for q in r.questions if q.usage is not None]
    calls = [r.report["construction_calls"] for r in runs]
    return {
        "conversations": n,
        "turns": sum(r.summary.turns for r in runs),
        "questions": len(questions),
        "merges": sum(r.summary.merges for r in runs),
        "consolidations": sum(r.summary.consolidations for r in runs),
        "episodes": sum(r.summary.episodes for r in runs),
        "facts": sum(r.summary.facts for r in runs),
        "construction_calls": sum(sum(c.values()) for c in calls),
        "construction_tokens_per_conversation": (
            sum(r.summary.construction_usage.total for r in runs) / n if n else 0.0),
        "query_tokens_per_question": (
            sum(q.usage["total"] for q in questions) / len(questions) if questions else 0.0),
    }


def bench(records: Sequence[ConversationRecord], base: EngineConfig, modes: Sequence[str] = ("recurrence", "eager"),
          sweeps: Optional[dict[str, Sequence[float]]] = None, workers: int = 1,
          ask: bool = True) -> list[dict]:
    """Compare consolidation policies, and optionally sweep thresholds in recurrence mode.

    ``sweeps`` maps ``"theta_count"`` / ``"theta_sim"`` to the values to try.
    """
    rows = []
    for mode in modes:
        cfg = dataclasses.replace(base, mode=mode)
        rows.append({"mode": mode, **_params(cfg), **aggregate(run_all(records, cfg, workers, ask=ask))})
    for name, values in (sweeps or {}).items():
        for v in values:
            cons = dataclasses.replace(base.consolidation, **{name: type(getattr(base.consolidation, name))(v)})
            if cons.neighbor_k < cons.theta_count:
                cons = dataclasses.replace(cons, neighbor_k=cons.theta_count)
            cfg = dataclasses.replace(base, mode="recurrence", consolidation=cons)
            rows.append({"mode": "recurrence", "sweep": name, **_params(cfg),
                         **aggregate(run_all(records, cfg, workers, ask=ask))})
    return rows


def _params(cfg: EngineConfig) -> dict:
    return {"theta_sim": cfg.consolidation.theta_sim, "theta_count": cfg.consolidation.theta_count}
