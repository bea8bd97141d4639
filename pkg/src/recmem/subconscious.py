"""Raw-turn store and the recurrence trigger.

Every turn is embedded and indexed as soon as it arrives; nothing here
calls an LLM. ``relevant_set`` and ``should_consolidate`` decide when a
topic has recurred often enough to be worth consolidating.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional

import numpy as np

from .encoder import Encoder
from .errors import DuplicateTurnId, EmptyText, UnknownId
from .index import VectorIndex

CASUAL = (0.7, 5)
TASK_ORIENTED = (0.6, 4)


def parse_timestamp(ts: str) -> datetime:
    """ISO-8601 -> aware datetime (naive values are taken as UTC)."""
    s = ts.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


@dataclass(frozen=True)
class InteractionUnit:
    turn_id: str
    user_message: str
    assistant_message: str
    timestamp: str
    session_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.user_message and not self.assistant_message:
            raise EmptyText(f"turn {self.turn_id} has neither a user nor an assistant message")
        parse_timestamp(self.timestamp)

    @property
    def time(self) -> datetime:
        return parse_timestamp(self.timestamp)

    def sort_key(self) -> tuple:
        return (self.time, self.turn_id)

    def to_json(self) -> dict:
        d = {
            "turn_id": self.turn_id,
            "user": self.user_message,
            "assistant": self.assistant_message,
            "timestamp": self.timestamp,
        }
        if self.session_id is not None:
            d["session_id"] = self.session_id
        return d

    @classmethod
    def from_json(cls, d: dict) -> "InteractionUnit":
        return cls(d["turn_id"], d.get("user", ""), d.get("assistant", ""), d["timestamp"], d.get("session_id"))


@dataclass(eq=False)
class SubconsciousUnit:
    unit: InteractionUnit
    vector: np.ndarray
    episode_refs: list[str] = field(default_factory=list)

    @property
    def turn_id(self) -> str:
        return self.unit.turn_id

    @property
    def consolidated(self) -> bool:
        return bool(self.episode_refs)


@dataclass
class ConsolidationConfig:
    theta_sim: float = CASUAL[0]
    theta_count: int = CASUAL[1]
    neighbor_k: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta_sim <= 1.0:
            raise ValueError("theta_sim must lie in [0, 1]")
        if self.theta_count < 1:
            raise ValueError("theta_count must be >= 1")
        if self.neighbor_k < self.theta_count:
            raise ValueError("neighbor_k must be >= theta_count or the trigger can never fire")

    @classmethod
    def casual(cls, **kw) -> "ConsolidationConfig":
        return cls(theta_sim=CASUAL[0], theta_count=CASUAL[1], **kw)

    @classmethod
    def task_oriented(cls, **kw) -> "ConsolidationConfig":
        return cls(theta_sim=TASK_ORIENTED[0], theta_count=TASK_ORIENTED[1], **kw)


class SubconsciousStore:
    def __init__(self, encoder: Encoder):
        self.encoder = encoder
        self.index = VectorIndex(encoder.dim)
        self._units: dict[str, SubconsciousUnit] = {}
        self._last_time: Optional[datetime] = None
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._units)

    def __contains__(self, turn_id: str) -> bool:
        return turn_id in self._units

    def get(self, turn_id: str) -> SubconsciousUnit:
        try:
            return self._units[turn_id]
        except KeyError:
            raise UnknownId(turn_id) from None

    def units(self) -> list[SubconsciousUnit]:
        """All units in ingestion order."""
        return list(self._units.values())

    def store(self, u: InteractionUnit) -> SubconsciousUnit:
        with self._lock:
            if u.turn_id in self._units:
                raise DuplicateTurnId(u.turn_id)
            t = u.time
            if self._last_time is not None and t < self._last_time:
                raise ValueError(f"turn {u.turn_id} is older than the previous turn")
            vec = self.encoder.encode_unit(u)
            return self._add(SubconsciousUnit(u, vec), t)

    def _add(self, s: SubconsciousUnit, t: datetime) -> SubconsciousUnit:
        self.index.insert(s.turn_id, s.vector)
        self._units[s.turn_id] = s
        self._last_time = t
        return s

    def restore_unit(self, s: SubconsciousUnit) -> None:
        with self._lock:
            if s.turn_id in self._units:
                raise DuplicateTurnId(s.turn_id)
            self._add(s, s.unit.time)

    def relevant_set(self, s: SubconsciousUnit, cfg: ConsolidationConfig) -> list[SubconsciousUnit]:
        """Unconsolidated neighbours of ``s`` within ``theta_sim``, nearest first.

        ``s`` is already indexed, so it retrieves itself with score 1.0.
        """
        hits = self.index.top_k(s.vector, cfg.neighbor_k)
        out = []
        for h in hits:
            other = self._units[h.id]
            if h.score >= cfg.theta_sim and not other.consolidated:
                out.append(other)
        if not s.consolidated and all(o.turn_id != s.turn_id for o in out):
            # zero vector, rounding just under theta_sim=1.0, or pushed out of
            # the top-k by earlier exact duplicates
            out.append(s)
        return out

    @staticmethod
    def should_consolidate(relevant: Iterable, cfg: ConsolidationConfig) -> bool:
        return len(list(relevant)) >= cfg.theta_count

    def mark_consolidated(self, turn_ids: Iterable[str], episode_id: str) -> None:
        turn_ids = list(turn_ids)
        with self._lock:
            missing = [t for t in turn_ids if t not in self._units]
            if missing:
                raise UnknownId(", ".join(missing))
            for t in turn_ids:
                refs = self._units[t].episode_refs
                if episode_id not in refs:
                    refs.append(episode_id)
