"""Append-only shared context ledger, checklist, and gate-outcome algebra.

Every agent in the pipeline reads from and extends a single ledger of
immutable records.  Records are serialized one-per-line (JSON) so that a
partially completed run remains inspectable on disk.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence

RECORD_KINDS = frozenset(
    {
        "extraction",
        "geometry-spec",
        "bc-spec",
        "bounds",
        "run-result",
        "gate-outcome",
        "warning",
        "assessment",
        "report-ref",
        "correction",
        "escalation",
        "trace",
    }
)


class SchemaViolation(ValueError):
    """A record draft failed validation; carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class GateLevel(Enum):
    """Tri-state gate outcome lattice: REJECT < CONDITIONAL < PASS."""

    REJECT = 0
    CONDITIONAL = 1
    PASS = 2

    def __lt__(self, other: "GateLevel") -> bool:
        return self.value < other.value


class Verdict(Enum):
    REJECTED = "rejected"
    CONDITIONAL_SUCCESS = "conditional-success"
    UNCONDITIONAL_SUCCESS = "unconditional-success"


GATE_IDS = ("G1-mesh-review", "G2-convergence", "G3-bounds", "G4-compliance")


@dataclass(frozen=True)
class GateOutcome:
    """Outcome of one quality gate.

    A non-PASS outcome must explain itself: at least one warning or a
    diagnosis document is required.
    """

    gate_id: str
    level: GateLevel
    warnings: tuple[str, ...] = ()
    diagnosis: Optional[dict] = None

    def __post_init__(self) -> None:
        if self.gate_id not in GATE_IDS:
            raise SchemaViolation("gate_id", f"unknown gate {self.gate_id!r}")
        if self.level is not GateLevel.PASS and not self.warnings and self.diagnosis is None:
            raise SchemaViolation(
                "warnings", f"{self.level.name} outcome requires a warning or diagnosis"
            )

    def to_payload(self) -> dict:
        return {
            "gate_id": self.gate_id,
            "level": self.level.name,
            "warnings": list(self.warnings),
            "diagnosis": self.diagnosis,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "GateOutcome":
        return cls(
            gate_id=payload["gate_id"],
            level=GateLevel[payload["level"]],
            warnings=tuple(payload.get("warnings", ())),
            diagnosis=payload.get("diagnosis"),
        )


def pipeline_verdict(outcomes: Sequence[GateOutcome]) -> Verdict:
    """Lattice-min over gate levels: any reject dominates, all-pass is unconditional."""
    if not outcomes:
        raise ValueError("pipeline_verdict requires at least one gate outcome")
    lowest = min(o.level for o in outcomes)
    if lowest is GateLevel.REJECT:
        return Verdict.REJECTED
    if lowest is GateLevel.CONDITIONAL:
        return Verdict.CONDITIONAL_SUCCESS
    return Verdict.UNCONDITIONAL_SUCCESS


@dataclass(frozen=True)
class ContextRecord:
    seq: int
    author: str
    kind: str
    payload: dict
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "author": self.author,
                "kind": self.kind,
                "payload": self.payload,
                "timestamp": self.timestamp,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "ContextRecord":
        doc = json.loads(line)
        return cls(
            seq=doc["seq"],
            author=doc["author"],
            kind=doc["kind"],
            payload=doc["payload"],
            timestamp=doc["timestamp"],
        )


def _validate_payload(kind: str, payload: Any) -> None:
    if kind not in RECORD_KINDS:
        raise SchemaViolation("kind", f"unknown record kind {kind!r}")
    if not isinstance(payload, dict):
        raise SchemaViolation("payload", "payload must be a mapping")
    try:
        json.dumps(payload)
    except (TypeError, ValueError) as exc:
        raise SchemaViolation("payload", f"payload not JSON-serializable: {exc}") from exc
    if kind == "gate-outcome":
        GateOutcome.from_payload(payload)  # raises on malformed gate payloads


class ContextLedger:
    """Single-writer, many-reader append-only record sequence.

    Appends are serialized through an internal lock; readers take immutable
    snapshots (tuples) that are safe to share across threads.
    """

    def __init__(self) -> None:
        self._records: list[ContextRecord] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ContextRecord]:
        return iter(self.records())

    def append(self, author: str, kind: str, payload: dict, timestamp: float = 0.0) -> ContextRecord:
        _validate_payload(kind, payload)
        with self._lock:
            record = ContextRecord(
                seq=len(self._records),
                author=author,
                kind=kind,
                payload=payload,
                timestamp=timestamp,
            )
            self._records.append(record)
        return record

    def records(self) -> tuple[ContextRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def snapshot(self) -> "LedgerView":
        return LedgerView(self.records())

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for record in self.records():
                fh.write(record.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ContextLedger":
        ledger = cls()
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = ContextRecord.from_json(line)
                appended = ledger.append(
                    record.author, record.kind, record.payload, record.timestamp
                )
                if appended.seq != record.seq:
                    raise SchemaViolation("seq", f"gap in ledger at seq {record.seq}")
        return ledger


class LedgerView:
    """Immutable read snapshot of a ledger, handed to agents as their context."""

    def __init__(self, records: tuple[ContextRecord, ...]):
        self._records = records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ContextRecord]:
        return iter(self._records)

    def by_kind(self, kind: str) -> tuple[ContextRecord, ...]:
        return tuple(r for r in self._records if r.kind == kind)

    def last_of_kind(self, kind: str) -> Optional[ContextRecord]:
        for record in reversed(self._records):
            if record.kind == kind:
                return record
        return None

    def get(self, seq: int) -> ContextRecord:
        return self._records[seq]


class ChecklistStatus(Enum):
    PENDING = "pending"
    IN_PROGRESS = "in-progress"
    DONE = "done"
    BLOCKED = "blocked"


_ALLOWED_TRANSITIONS = {
    ChecklistStatus.PENDING: {ChecklistStatus.IN_PROGRESS},
    ChecklistStatus.IN_PROGRESS: {ChecklistStatus.DONE, ChecklistStatus.BLOCKED},
    ChecklistStatus.DONE: set(),
    ChecklistStatus.BLOCKED: set(),
}


@dataclass
class ChecklistItem:
    item_id: str
    description: str
    status: ChecklistStatus = ChecklistStatus.PENDING


class Checklist:
    """Ordered task list with a one-way status state machine."""

    def __init__(self, items: Sequence[tuple[str, str]] = ()):
        self._items: dict[str, ChecklistItem] = {}
        for item_id, description in items:
            self.add(item_id, description)

    def add(self, item_id: str, description: str) -> ChecklistItem:
        if item_id in self._items:
            raise ValueError(f"duplicate checklist item {item_id!r}")
        item = ChecklistItem(item_id, description)
        self._items[item_id] = item
        return item

    def advance(self, item_id: str, status: ChecklistStatus) -> ChecklistItem:
        item = self._items[item_id]
        if status not in _ALLOWED_TRANSITIONS[item.status]:
            raise ValueError(
                f"illegal checklist transition {item.status.value} -> {status.value}"
            )
        item.status = status
        return item

    def items(self) -> tuple[ChecklistItem, ...]:
        return tuple(self._items.values())

    def all_done(self) -> bool:
        return all(i.status is ChecklistStatus.DONE for i in self._items.values())
