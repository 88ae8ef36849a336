"""Audit event records: types, validation and JSON-lines (de)serialization.

Each line of an event stream is one JSON object::

    {"ts": 5, "sub": "p1", "sub_name": "c:/setup.exe",
     "obj": "f1", "obj_name": "c:/a.dll", "kind": "File", "rel": "Write"}

Names are normalized on parse: backslashes become ``/`` and everything is
lowercased (Windows path semantics).
"""
from __future__ import annotations

import enum
import io
import json
import logging
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

log = logging.getLogger(__name__)


class EntityKind(str, enum.Enum):
    PROCESS = "Process"
    FILE = "File"
    SOCKET = "Socket"


class Relation(str, enum.Enum):
    START = "Start"
    END = "End"
    RENAME = "Rename"
    READ = "Read"
    WRITE = "Write"
    EXECUTE = "Execute"
    DELETE = "Delete"
    SEND = "Send"
    RECEIVE = "Receive"


# object kind each relation is allowed to act upon
RELATION_OBJECT_KIND = {
    Relation.START: EntityKind.PROCESS,
    Relation.END: EntityKind.PROCESS,
    Relation.RENAME: EntityKind.FILE,
    Relation.READ: EntityKind.FILE,
    Relation.WRITE: EntityKind.FILE,
    Relation.EXECUTE: EntityKind.FILE,
    Relation.DELETE: EntityKind.FILE,
    Relation.SEND: EntityKind.SOCKET,
    Relation.RECEIVE: EntityKind.SOCKET,
}

RECORD_KEYS = ("ts", "sub", "sub_name", "obj", "obj_name", "kind", "rel")

_RELATION_BY_NAME = {r.value.lower(): r for r in Relation}
_KIND_BY_NAME = {k.value: k for k in EntityKind}


class AuditParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MalformedRecord(AuditParseError):
    pass


class KindRelationMismatch(AuditParseError):
    pass


class NonMonotoneTimestamp(AuditParseError):
    pass


@dataclass(frozen=True)
class AuditEvent:
    """One subject -> object system event. The subject is always a process."""

    timestamp: int
    subject_id: str
    subject_name: str
    object_id: str
    object_name: str
    object_kind: EntityKind
    relation: Relation

    def to_record(self) -> dict:
        return {
            "ts": self.timestamp,
            "sub": self.subject_id,
            "sub_name": self.subject_name,
            "obj": self.object_id,
            "obj_name": self.object_name,
            "kind": self.object_kind.value,
            "rel": self.relation.value,
        }


def normalize_name(name: str) -> str:
    return name.replace("\\", "/").lower()


def validate_event(event: AuditEvent) -> str | None:
    """Return a description of the first violated invariant, or None if valid."""
    if not isinstance(event.timestamp, int) or isinstance(event.timestamp, bool):
        return "timestamp must be an integer"
    if event.timestamp < 0:
        return "timestamp ≥ 0"
    for field in ("subject_id", "object_id"):
        value = getattr(event, field)
        if not isinstance(value, str) or not value:
            return f"{field} must be a nonempty string"
    for field in ("subject_name", "object_name"):
        if not isinstance(getattr(event, field), str):
            return f"{field} must be a string"
    if not isinstance(event.object_kind, EntityKind):
        return "object_kind must be an EntityKind"
    if not isinstance(event.relation, Relation):
        return "relation must be a Relation"
    required = RELATION_OBJECT_KIND[event.relation]
    if event.object_kind is not required:
        return f"{event.relation.value} requires {required.value} object"
    return None


def _decode_record(record: object, line_no: int, strict: bool) -> AuditEvent:
    if not isinstance(record, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    missing = [k for k in RECORD_KEYS if k not in record]
    if missing:
        raise MalformedRecord(line_no, f"missing keys {missing}")
    if strict:
        extra = sorted(set(record) - set(RECORD_KEYS))
        if extra:
            raise MalformedRecord(line_no, f"unknown keys {extra}")
    ts = record["ts"]
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise MalformedRecord(line_no, "ts must be an integer")
    for key in ("sub", "sub_name", "obj", "obj_name", "kind", "rel"):
        if not isinstance(record[key], str):
            raise MalformedRecord(line_no, f"{key} must be a string")
    kind = _KIND_BY_NAME.get(record["kind"])
    if kind is None:
        raise MalformedRecord(line_no, f"unknown kind {record['kind']!r}")
    rel = _RELATION_BY_NAME.get(record["rel"].lower())
    if rel is None:
        raise MalformedRecord(line_no, f"unknown relation {record['rel']!r}")
    event = AuditEvent(
        timestamp=ts,
        subject_id=record["sub"],
        subject_name=normalize_name(record["sub_name"]),
        object_id=record["obj"],
        object_name=normalize_name(record["obj_name"]),
        object_kind=kind,
        relation=rel,
    )
    problem = validate_event(event)
    if problem is not None:
        if RELATION_OBJECT_KIND[rel] is not kind:
            raise KindRelationMismatch(line_no, problem)
        raise MalformedRecord(line_no, problem)
    return event


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    for line in source:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line


def parse_events(
    source: bytes | str | IO | Iterable[str],
    *,
    strict: bool = False,
    strict_order: bool = False,
    permissive: bool = False,
) -> list[AuditEvent]:
    """Parse a JSON-lines event stream.

    Events come back sorted by timestamp; equal timestamps keep input order.
    ``strict`` rejects unknown record keys, ``strict_order`` raises
    :class:`NonMonotoneTimestamp` instead of re-sorting, and ``permissive``
    logs and skips bad lines instead of raising.
    """
    events: list[AuditEvent] = []
    skipped = 0
    last_ts = None
    for line_no, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        try:
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
            event = _decode_record(record, line_no, strict)
            if strict_order and last_ts is not None and event.timestamp < last_ts:
                raise NonMonotoneTimestamp(
                    line_no, f"timestamp {event.timestamp} < previous {last_ts}")
        except AuditParseError as exc:
            if not permissive:
                raise
            skipped += 1
            log.warning("skipping %s", exc)
            continue
        last_ts = event.timestamp
        events.append(event)
    if skipped:
        log.warning("skipped %d malformed record(s)", skipped)
    # sorted() is stable, so ties keep their input order
    return sorted(events, key=lambda e: e.timestamp)


def serialize_events(events: Iterable[AuditEvent]) -> str:
    return "".join(
        json.dumps(e.to_record(), ensure_ascii=False) + "\n" for e in events)


def read_events(path, **kwargs) -> list[AuditEvent]:
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh, **kwargs)


def write_events(path, events: Iterable[AuditEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_events(events))
