"""Conversation data model, JSONL ingestion and per-response row extraction.

A conversation is an ordered list of (user message, chatbot response) turns.
The row dataset represents each conversation once per chatbot response,
carrying the preceding context plus outcome annotations (subsequent user
messages, regeneration flag, optional star rating).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import IO, Iterable, Iterator

from .errors import EngageError

VALID_STARS = (1, 2, 3, 4)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    regenerated: bool = False
    star_rating: int | None = None
    latency_ms: int | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("response text is empty")
        if self.star_rating is not None and self.star_rating not in VALID_STARS:
            raise ValueError(f"star_rating out of range: {self.star_rating}")
        if self.latency_ms is not None and self.latency_ms < 0:
            raise ValueError("latency_ms must be non-negative")


@dataclass(frozen=True)
class Turn:
    user_message: str
    response: ChatResponse

    def __post_init__(self):
        if not self.user_message.strip():
            raise ValueError("user message is empty")


@dataclass(frozen=True)
class Conversation:
    id: str
    user_id: str
    character_id: str
    started_at: datetime
    turns: tuple[Turn, ...]
    greeting: str | None = None  # platform's opening bot message, context only

    def __post_init__(self):
        if len(self.turns) < 1:
            raise ValueError("conversation has no turns")
        object.__setattr__(self, "turns", tuple(self.turns))

    def __len__(self) -> int:
        return len(self.turns)


@dataclass(frozen=True)
class ResponseRow:
    """One chatbot response with its context and outcome annotations."""

    conversation_id: str
    turn_index: int  # 1-based
    context_turns: tuple[Turn, ...]  # all turns strictly before turn_index
    user_message: str  # the user message at turn_index
    response_text: str
    n_subsequent_user_messages: int
    regenerated: bool
    star_rating: int | None = None

    def __post_init__(self):
        if self.turn_index < 1:
            raise ValueError("turn_index must be >= 1")
        if self.n_subsequent_user_messages < 0:
            raise ValueError("n_subsequent_user_messages must be >= 0")
        object.__setattr__(self, "context_turns", tuple(self.context_turns))


@dataclass(frozen=True)
class UserActivity:
    user_id: str
    first_conversation_date: date
    active_dates: frozenset[date]

    def __post_init__(self):
        object.__setattr__(self, "active_dates", frozenset(self.active_dates))
        if self.first_conversation_date not in self.active_dates:
            raise ValueError("first_conversation_date not in active_dates")
        if any(d < self.first_conversation_date for d in self.active_dates):
            raise ValueError("active date before first_conversation_date")


@dataclass
class LineIssue:
    line_number: int
    reason: str
    severity: str = "error"  # "error" or "warning"


@dataclass
class ValidationReport:
    errors: list[LineIssue] = field(default_factory=list)
    warnings: list[LineIssue] = field(default_factory=list)

    def error(self, line_number: int, reason: str):
        self.errors.append(LineIssue(line_number, reason, "error"))

    def warn(self, line_number: int, reason: str):
        self.warnings.append(LineIssue(line_number, reason, "warning"))

    @property
    def ok(self) -> bool:
        return not self.errors


def conversation_length(conversation: Conversation) -> int:
    """Number of user-message/response turns in the conversation."""
    return len(conversation.turns)


# ---------------------------------------------------------------------------
# JSONL round trip


def response_to_dict(r: ChatResponse) -> dict:
    d = {"text": r.text, "regenerated": r.regenerated}
    if r.star_rating is not None:
        d["star_rating"] = r.star_rating
    if r.latency_ms is not None:
        d["latency_ms"] = r.latency_ms
    return d


def conversation_to_dict(conv: Conversation) -> dict:
    d = {
        "id": conv.id,
        "user_id": conv.user_id,
        "character_id": conv.character_id,
        "started_at": conv.started_at.isoformat(),
        "turns": [
            {"user_message": t.user_message, "response": response_to_dict(t.response)}
            for t in conv.turns
        ],
    }
    if conv.greeting is not None:
        d["greeting"] = conv.greeting
    return d


def serialize_conversation(conv: Conversation) -> str:
    return json.dumps(conversation_to_dict(conv), ensure_ascii=False)


def _parse_response(obj: dict) -> ChatResponse:
    if not isinstance(obj, dict):
        raise ValueError("response must be an object")
    text = obj.get("text")
    if not isinstance(text, str):
        raise ValueError("response text must be a string")
    regenerated = obj.get("regenerated", False)
    if not isinstance(regenerated, bool):
        raise ValueError("regenerated must be a boolean")
    star = obj.get("star_rating")
    if star is not None and (isinstance(star, bool) or not isinstance(star, int)):
        raise ValueError("star_rating must be an integer")
    if star is not None and star not in VALID_STARS:
        raise ValueError(f"star_rating out of range: {star}")
    latency = obj.get("latency_ms")
    if latency is not None and (isinstance(latency, bool) or not isinstance(latency, int)):
        raise ValueError("latency_ms must be an integer")
    return ChatResponse(text=text, regenerated=regenerated, star_rating=star,
                        latency_ms=latency)


def conversation_from_dict(obj: dict) -> Conversation:
    for key in ("id", "user_id", "character_id", "started_at"):
        if not isinstance(obj.get(key), str):
            raise ValueError(f"missing or non-string field: {key}")
    try:
        started_at = datetime.fromisoformat(obj["started_at"])
    except ValueError as exc:
        raise ValueError(f"bad started_at: {exc}") from None
    if started_at.tzinfo is None:
        started_at = started_at.replace(tzinfo=timezone.utc)
    raw_turns = obj.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise ValueError("turns must be a non-empty list")
    turns = []
    for i, t in enumerate(raw_turns, start=1):
        if not isinstance(t, dict):
            raise ValueError(f"turn {i} is not an object")
        msg = t.get("user_message")
        if not isinstance(msg, str) or not msg.strip():
            raise ValueError(f"turn {i}: user_message missing or empty")
        turns.append(Turn(user_message=msg, response=_parse_response(t.get("response"))))
    greeting = obj.get("greeting")
    if greeting is not None and not isinstance(greeting, str):
        raise ValueError("greeting must be a string")
    return Conversation(id=obj["id"], user_id=obj["user_id"],
                        character_id=obj["character_id"], started_at=started_at,
                        turns=tuple(turns), greeting=greeting)


def parse_conversations(
    stream: Iterable[str], strict: bool = False
) -> tuple[list[Conversation], ValidationReport]:
    """Parse line-delimited conversation records.

    Invalid lines are collected into the report with line number and reason
    rather than dropped silently. In strict mode warnings count as errors.
    """
    report = ValidationReport()
    out: list[Conversation] = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            report.error(lineno, f"invalid JSON: {exc.msg}")
            continue
        try:
            conv = conversation_from_dict(obj)
        except (ValueError, TypeError) as exc:
            report.error(lineno, str(exc))
            continue
        if len(conv.turns) < 1:
            report.error(lineno, "conversation has no turns")
            continue
        # Platform logs normally record at least a greeting plus one user
        # reply; a 1-turn conversation without greeting is suspicious but
        # accepted unless strict.
        if len(conv.turns) == 1 and conv.greeting is None:
            if strict:
                report.error(lineno, "single-turn conversation without greeting")
                continue
            report.warn(lineno, "single-turn conversation without greeting")
        out.append(conv)
    return out, report


def extract_rows(conversation: Conversation) -> list[ResponseRow]:
    """One row per chatbot response; row i carries turns 1..i-1 as context."""
    n = len(conversation.turns)
    rows = []
    for i, turn in enumerate(conversation.turns, start=1):
        rows.append(
            ResponseRow(
                conversation_id=conversation.id,
                turn_index=i,
                context_turns=conversation.turns[: i - 1],
                user_message=turn.user_message,
                response_text=turn.response.text,
                n_subsequent_user_messages=n - i,
                regenerated=turn.response.regenerated,
                star_rating=turn.response.star_rating,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Row file format (the public per-response release analog)


def row_to_dict(row: ResponseRow) -> dict:
    d = {
        "conversation_id": row.conversation_id,
        "turn_index": row.turn_index,
        "context_turns": [
            {"user_message": t.user_message, "response": response_to_dict(t.response)}
            for t in row.context_turns
        ],
        "user_message": row.user_message,
        "response_text": row.response_text,
        "n_subsequent_user_messages": row.n_subsequent_user_messages,
        "regenerated": row.regenerated,
    }
    if row.star_rating is not None:
        d["star_rating"] = row.star_rating
    return d


def row_from_dict(obj: dict) -> ResponseRow:
    turns = tuple(
        Turn(user_message=t["user_message"], response=_parse_response(t["response"]))
        for t in obj.get("context_turns", [])
    )
    return ResponseRow(
        conversation_id=obj["conversation_id"],
        turn_index=obj["turn_index"],
        context_turns=turns,
        user_message=obj["user_message"],
        response_text=obj["response_text"],
        n_subsequent_user_messages=obj["n_subsequent_user_messages"],
        regenerated=obj["regenerated"],
        star_rating=obj.get("star_rating"),
    )


def write_rows(rows: Iterable[ResponseRow], fh: IO[str]):
    for row in rows:
        fh.write(json.dumps(row_to_dict(row), ensure_ascii=False) + "\n")


def read_rows(stream: Iterable[str]) -> Iterator[ResponseRow]:
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield row_from_dict(json.loads(line))
        except (KeyError, ValueError, TypeError) as exc:
            raise EngageError(f"bad row on line {lineno}: {exc}") from exc
