"""LLM completion backends and token accounting.

``StubLLM`` is a deterministic offline backend whose outputs follow the
same JSON contracts the remote model is asked to produce. It reads the
structured ``inputs`` attached to each request rather than parsing the
prompt text; usage is still charged on the rendered prompt so cost
comparisons reflect what a real model would be billed.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol

import httpx

from .encoder import API_KEY_ENV
from .errors import LlmFailure, LlmTimeout, RemoteUnavailable, UnknownConversation

logger = logging.getLogger(__name__)

PURPOSES = ("merge", "consolidate", "refine", "answer")
CONSTRUCTION_PURPOSES = ("merge", "consolidate", "refine")
CHARS_PER_TOKEN = 4
NO_MEMORY_ANSWER = "no relevant memory"

_FACT_RE = re.compile(r"FACT\{([^{}]*)\}")
_SUPERSEDES_RE = re.compile(r"SUPERSEDES\{([^{}]*)\}")


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def as_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}


@dataclass
class LlmRequest:
    purpose: str
    prompt: str
    system: str = ""
    temperature: float = 0.0
    # structured view of the prompt's contents; only the stub reads it
    inputs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")
        if self.temperature != 0.0:
            raise ValueError("temperature is fixed at 0.0")
        if not self.prompt:
            raise ValueError("prompt must be non-empty")

    @property
    def phase(self) -> str:
        return "query" if self.purpose == "answer" else "construction"

    def rendered(self) -> str:
        return f"{self.system}\n{self.prompt}" if self.system else self.prompt


class LLMBackend(Protocol):
    def complete(self, req: LlmRequest) -> tuple[str, TokenUsage]: ...


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / CHARS_PER_TOKEN)


class StubLLM:
    """Deterministic backend for offline runs and tests."""

    def complete(self, req: LlmRequest) -> tuple[str, TokenUsage]:
        handler = getattr(self, f"_{req.purpose}")
        text = handler(req.inputs)
        return text, TokenUsage(estimate_tokens(req.rendered()), estimate_tokens(text))

    def _merge(self, inputs: dict) -> str:
        narrative = f"{inputs['narrative']}\nMERGED[{inputs['turn_id']}] {inputs['unit_text']}"
        return json.dumps({"narrative": narrative})

    def _consolidate(self, inputs: dict) -> str:
        units = inputs["units"]
        first_user = units[0].get("user", "").strip()
        title = "Episode: " + (first_user[:60] if first_user else units[0]["turn_id"])
        narrative = "EPISODE:\n" + "\n".join(u["text"] for u in units)
        return json.dumps([{
            "title": title,
            "narrative": narrative,
            "source_turn_ids": [u["turn_id"] for u in units],
        }])

    def _refine(self, inputs: dict) -> str:
        by_text = {f["text"]: f["fact_id"] for f in inputs.get("context", [])}
        facts, supersedes = [], []
        for u in inputs["units"]:
            for m in _FACT_RE.finditer(u["text"]):
                text = m.group(1).strip()
                if text:
                    facts.append({"text": text, "source_turn_ids": [u["turn_id"]]})
            for m in _SUPERSEDES_RE.finditer(u["text"]):
                old = by_text.get(m.group(1).strip())
                if old is not None and old not in supersedes:
                    supersedes.append(old)
        return json.dumps({"facts": facts, "supersedes": supersedes})

    def _answer(self, inputs: dict) -> str:
        for section in ("semantic", "episodic", "subconscious"):
            items = inputs.get(section) or []
            if items:
                return items[0]
        return NO_MEMORY_ANSWER


class RemoteLLM:
    """OpenAI-compatible chat-completions client with retry and backoff."""

    def __init__(
        self,
        model_name: str = "gpt-4o-mini",
        endpoint_url: str = "https://api.openai.com/v1",
        retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.model_name = model_name
        self.endpoint_url = endpoint_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._client = client
        self._sleep = sleep

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        client = self._client or httpx.Client(timeout=self.timeout)
        try:
            resp = client.post(f"{self.endpoint_url}/chat/completions", json=body, headers=headers)
            resp.raise_for_status()
            return resp.json()
        except httpx.TimeoutException as exc:
            raise LlmTimeout(str(exc)) from exc
        except (httpx.HTTPError, ValueError) as exc:
            raise RemoteUnavailable(str(exc)) from exc
        finally:
            if self._client is None:
                client.close()

    def complete(self, req: LlmRequest) -> tuple[str, TokenUsage]:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.prompt})
        body = {"model": self.model_name, "temperature": 0.0, "messages": messages}

        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                delay = self.backoff * 2 ** (attempt - 1)
                logger.warning("retrying %s call in %.1fs (%s)", req.purpose, delay, last)
                self._sleep(delay)
            try:
                data = self._post(body)
            except (RemoteUnavailable, LlmTimeout) as exc:
                last = exc
                continue
            try:
                text = data["choices"][0]["message"]["content"]
                usage = data.get("usage") or {}
                return text or "", TokenUsage(
                    int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
                )
            except (KeyError, IndexError, TypeError) as exc:
                raise LlmFailure(f"unexpected completion payload: {exc}") from exc
        if isinstance(last, LlmTimeout):
            raise last
        raise LlmFailure(f"{req.purpose} call failed after {self.retries + 1} attempts: {last}")


@dataclass
class _ConversationTally:
    construction: TokenUsage = field(default_factory=TokenUsage)
    calls: dict = field(default_factory=lambda: defaultdict(int))
    usage_by_purpose: dict = field(default_factory=lambda: defaultdict(TokenUsage))
    questions: dict = field(default_factory=dict)  # question_id -> TokenUsage, insertion ordered


class TokenLedger:
    """Per-conversation construction usage and per-question query usage."""

    def __init__(self) -> None:
        self._tallies: dict[str, _ConversationTally] = {}
        self._lock = threading.Lock()

    def register(self, conversation_id: str) -> None:
        with self._lock:
            self._tallies.setdefault(conversation_id, _ConversationTally())

    def record(self, conversation_id: str, purpose: str, usage: TokenUsage,
               question_id: Optional[str] = None) -> None:
        if purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {purpose!r}")
        if (purpose == "answer") != (question_id is not None):
            raise ValueError("query-phase usage needs a question id; construction usage must not have one")
        with self._lock:
            t = self._tallies.setdefault(conversation_id, _ConversationTally())
            t.calls[purpose] += 1
            t.usage_by_purpose[purpose] = t.usage_by_purpose[purpose] + usage
            if purpose == "answer":
                t.questions[question_id] = t.questions.get(question_id, TokenUsage()) + usage
            else:
                t.construction = t.construction + usage

    def call(self, backend: LLMBackend, req: LlmRequest, conversation_id: str,
             question_id: Optional[str] = None) -> str:
        """Run one completion and attribute its usage."""
        text, usage = backend.complete(req)
        self.record(conversation_id, req.purpose, usage, question_id)
        return text

    def calls(self, conversation_id: str, purpose: Optional[str] = None) -> int:
        t = self._get(conversation_id)
        with self._lock:
            if purpose is None:
                return sum(t.calls.values())
            return t.calls.get(purpose, 0)

    def construction_calls(self, conversation_id: str) -> int:
        return sum(self.calls(conversation_id, p) for p in CONSTRUCTION_PURPOSES)

    def construction_total(self, conversation_id: str) -> TokenUsage:
        return self._get(conversation_id).construction

    def _get(self, conversation_id: str) -> _ConversationTally:
        with self._lock:
            t = self._tallies.get(conversation_id)
        if t is None:
            raise UnknownConversation(conversation_id)
        return t

    def report(self, conversation_id: str) -> dict:
        t = self._get(conversation_id)
        with self._lock:
            per_q = [{"question_id": q, **u.as_dict(), "total": u.total} for q, u in t.questions.items()]
            n = len(per_q)
            return {
                "conversation_id": conversation_id,
                "construction_total": {**t.construction.as_dict(), "total": t.construction.total},
                "construction_calls": {p: t.calls.get(p, 0) for p in CONSTRUCTION_PURPOSES},
                "per_question_query_totals": per_q,
                "averages": {
                    "query_tokens_per_question": (sum(q["total"] for q in per_q) / n) if n else 0.0,
                    "query_prompt_tokens_per_question": (sum(q["prompt_tokens"] for q in per_q) / n) if n else 0.0,
                    "query_completion_tokens_per_question": (sum(q["completion_tokens"] for q in per_q) / n) if n else 0.0,
                },
            }

    def conversations(self) -> list[str]:
        with self._lock:
            return list(self._tallies)

    def aggregate(self) -> dict:
        """Means across all conversations held by this ledger."""
        ids = self.conversations()
        reports = [self.report(c) for c in ids]
        questions = [q for r in reports for q in r["per_question_query_totals"]]
        return {
            "conversations": len(ids),
            "questions": len(questions),
            "construction_tokens_per_conversation": (
                sum(r["construction_total"]["total"] for r in reports) / len(ids) if ids else 0.0),
            "query_tokens_per_question": (
                sum(q["total"] for q in questions) / len(questions) if questions else 0.0),
        }

    def to_json(self) -> dict:
        with self._lock:
            return {
                cid: {
                    "construction": t.construction.as_dict(),
                    "calls": {p: t.calls.get(p, 0) for p in PURPOSES},
                    "usage_by_purpose": {p: t.usage_by_purpose[p].as_dict() for p in PURPOSES if p in t.usage_by_purpose},
                    "questions": {q: u.as_dict() for q, u in t.questions.items()},
                }
                for cid, t in self._tallies.items()
            }

    @classmethod
    def from_json(cls, data: dict) -> "TokenLedger":
        ledger = cls()
        for cid, d in data.items():
            t = _ConversationTally(construction=TokenUsage(**d["construction"]))
            for p, n in d["calls"].items():
                if n:
                    t.calls[p] = n
            for p, u in d.get("usage_by_purpose", {}).items():
                t.usage_by_purpose[p] = TokenUsage(**u)
            t.questions = {q: TokenUsage(**u) for q, u in d["questions"].items()}
            ledger._tallies[cid] = t
        return ledger


def parse_json_output(text: str) -> Any:
    """Parse model output as JSON, tolerating a surrounding markdown fence."""
    s = text.strip()
    if s.startswith("```"):
        s = re.sub(r"^```[a-zA-Z]*\s*", "", s)
        s = re.sub(r"\s*```$", "", s)
    return json.loads(s)
