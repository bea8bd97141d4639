"""Conversation dataset loaders.

Three on-disk formats normalize to :class:`ConversationRecord`:

* ``native-jsonl``: one turn per line, ``{"conversation_id", "turn_id",
  "user", "assistant", "timestamp", "session_id"?}``; questions live in a
  sibling file of ``{"conversation_id", "question_id", "text",
  "expected"?, "category"?}`` lines.
* ``locomo``: the LoCoMo JSON release (two human speakers per sample).
* ``longmemeval``: the LongMemEval JSON release (one question per item).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional

from .errors import EmptyText, ParseError, UnsupportedFormat
from .fixtures import iso
from .subconscious import InteractionUnit, parse_timestamp

FORMATS = ("native-jsonl", "locomo", "longmemeval")


@dataclass
class Question:
    question_id: str
    text: str
    expected: Optional[str] = None
    category: Optional[str] = None

    def to_json(self, conversation_id: str) -> dict:
        d: dict[str, Any] = {"conversation_id": conversation_id, "question_id": self.question_id, "text": self.text}
        if self.expected is not None:
            d["expected"] = self.expected
        if self.category is not None:
            d["category"] = self.category
        return d


@dataclass
class ConversationRecord:
    conversation_id: str
    turns: list[InteractionUnit] = field(default_factory=list)
    questions: list[Question] = field(default_factory=list)

    def check_order(self, path=None) -> None:
        prev = None
        for u in self.turns:
            t = u.time
            if prev is not None and t < prev:
                raise ParseError(f"conversation {self.conversation_id}: turn {u.turn_id} goes back in time", path)
            prev = t


def default_questions_path(path: Path) -> Path:
    """``conv.jsonl`` -> ``conv.questions.jsonl``."""
    return path.with_name(path.stem + ".questions.jsonl")


def load_dataset(path: str | Path, format: str = "native-jsonl",
                 questions_path: str | Path | None = None) -> list[ConversationRecord]:
    path = Path(path)
    if format not in FORMATS:
        raise UnsupportedFormat(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if format == "native-jsonl":
        records = _load_native(path, Path(questions_path) if questions_path else None)
    elif format == "locomo":
        records = _load_locomo(path)
    else:
        records = _load_longmemeval(path)
    for r in records:
        r.check_order(path)
    return records


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path, lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", path, lineno)
            yield lineno, obj


def _load_native(path: Path, questions_path: Optional[Path]) -> list[ConversationRecord]:
    records: dict[str, ConversationRecord] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            cid = str(obj["conversation_id"])
            unit = InteractionUnit(
                turn_id=str(obj["turn_id"]),
                user_message=obj.get("user", "") or "",
                assistant_message=obj.get("assistant", "") or "",
                timestamp=str(obj["timestamp"]),
                session_id=obj.get("session_id"),
            )
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", path, lineno) from exc
        except (EmptyText, ValueError) as exc:
            raise ParseError(str(exc), path, lineno) from exc
        records.setdefault(cid, ConversationRecord(cid)).turns.append(unit)

    qpath = questions_path or default_questions_path(path)
    if qpath.exists():
        for lineno, obj in _iter_jsonl(qpath):
            try:
                cid = str(obj["conversation_id"])
                q = Question(str(obj["question_id"]), str(obj["text"]),
                             obj.get("expected"), obj.get("category"))
            except KeyError as exc:
                raise ParseError(f"missing field {exc}", qpath, lineno) from exc
            records.setdefault(cid, ConversationRecord(cid)).questions.append(q)
    return list(records.values())


def write_native(records: Iterable[ConversationRecord], path: str | Path,
                 questions_path: str | Path | None = None) -> None:
    path = Path(path)
    qpath = Path(questions_path) if questions_path else default_questions_path(path)
    records = list(records)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            for u in r.turns:
                fh.write(json.dumps({"conversation_id": r.conversation_id, **u.to_json()}, ensure_ascii=False) + "\n")
    if any(r.questions for r in records):
        with open(qpath, "w", encoding="utf-8") as fh:
            for r in records:
                for q in r.questions:
                    fh.write(json.dumps(q.to_json(r.conversation_id), ensure_ascii=False) + "\n")


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


# -- LoCoMo -------------------------------------------------------------------

_SESSION_RE = re.compile(r"^session_(\d+)$")


def _locomo_time(s: str) -> datetime:
    s = " ".join(s.split())
    for fmt in ("%I:%M %p on %d %B, %Y", "%I:%M %p on %d %b, %Y", "%Y-%m-%d %H:%M"):
        try:
            return datetime.strptime(s, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            pass
    return parse_timestamp(s)


def _locomo_text(msg: dict) -> str:
    text = msg.get("text", "") or ""
    caption = msg.get("blip_caption")
    if caption:
        text = f"{text} [shares an image: {caption}]".strip()
    return f"{msg['speaker']}: {text}"


def _pair_speakers(messages: list[dict], first: str) -> list[tuple[Optional[dict], Optional[dict]]]:
    """Pair each message of ``first`` with an immediately following reply from the other speaker."""
    pairs = []
    i = 0
    while i < len(messages):
        m = messages[i]
        if m["speaker"] == first:
            nxt = messages[i + 1] if i + 1 < len(messages) else None
            if nxt is not None and nxt["speaker"] != first:
                pairs.append((m, nxt))
                i += 2
                continue
            pairs.append((m, None))
        else:
            pairs.append((None, m))
        i += 1
    return pairs


def _load_locomo(path: Path) -> list[ConversationRecord]:
    data = _load_json(path)
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise ParseError("LoCoMo file must hold a list of samples", path)
    records = []
    for n, sample in enumerate(data):
        try:
            cid = str(sample.get("sample_id", f"locomo-{n}"))
            conv = sample["conversation"]
            sessions = sorted(
                (int(m.group(1)), key) for key in conv if (m := _SESSION_RE.match(key))
            )
            messages_seen = [msg for _, key in sessions for msg in conv[key]]
            if not messages_seen:
                records.append(ConversationRecord(cid))
                continue
            first = messages_seen[0]["speaker"]
            rec = ConversationRecord(cid)
            for num, key in sessions:
                stamp = conv.get(f"{key}_date_time")
                if stamp is None:
                    raise ParseError(f"sample {cid}: {key} has no date_time", path)
                ts = iso(_locomo_time(stamp))
                for k, (a, b) in enumerate(_pair_speakers(conv[key], first)):
                    rec.turns.append(InteractionUnit(
                        turn_id=f"{cid}-s{num:03d}-{k:04d}",
                        user_message=_locomo_text(a) if a else "",
                        assistant_message=_locomo_text(b) if b else "",
                        timestamp=ts,
                        session_id=f"{cid}-s{num:03d}",
                    ))
            for qi, qa in enumerate(sample.get("qa", [])):
                expected = qa.get("answer", qa.get("adversarial_answer"))
                rec.questions.append(Question(
                    f"{cid}-q{qi:03d}", str(qa["question"]),
                    None if expected is None else str(expected),
                    None if qa.get("category") is None else str(qa["category"]),
                ))
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"sample {n}: {exc!r}", path) from exc
        records.append(rec)
    return records


# -- LongMemEval --------------------------------------------------------------

def _lme_time(s: str) -> datetime:
    s = re.sub(r"\s*\([A-Za-z]{3}\)\s*", " ", s).strip()
    for fmt in ("%Y/%m/%d %H:%M", "%Y/%m/%d"):
        try:
            return datetime.strptime(s, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            pass
    return parse_timestamp(s)


def _load_longmemeval(path: Path) -> list[ConversationRecord]:
    data = _load_json(path)
    if not isinstance(data, list):
        raise ParseError("LongMemEval file must hold a list of items", path)
    records = []
    for n, item in enumerate(data):
        try:
            qid = str(item["question_id"])
            sessions = list(zip(item["haystack_dates"], item["haystack_sessions"]))
            ids = item.get("haystack_session_ids") or [f"h{i}" for i in range(len(sessions))]
            order = sorted(range(len(sessions)), key=lambda i: _lme_time(sessions[i][0]))
            rec = ConversationRecord(qid)
            for rank, i in enumerate(order):
                date, msgs = sessions[i]
                ts = iso(_lme_time(date))
                k = 0
                j = 0
                while j < len(msgs):
                    m = msgs[j]
                    user, asst = "", ""
                    if m["role"] == "user":
                        user = m["content"]
                        if j + 1 < len(msgs) and msgs[j + 1]["role"] == "assistant":
                            asst = msgs[j + 1]["content"]
                            j += 1
                    else:
                        asst = m["content"]
                    j += 1
                    if not user and not asst:
                        continue
                    rec.turns.append(InteractionUnit(
                        f"{qid}-s{rank:03d}-{k:04d}", user, asst, ts, session_id=str(ids[i])))
                    k += 1
            rec.questions.append(Question(
                qid, str(item["question"]),
                None if item.get("answer") is None else str(item["answer"]),
                item.get("question_type"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"item {n}: {exc!r}", path) from exc
        records.append(rec)
    return records
