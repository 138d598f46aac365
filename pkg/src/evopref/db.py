"""Deduplicated, fitness-ranked store of evaluated candidate algorithms.

Candidates are deduplicated by whitespace-trimmed code string, never by
semantics. Invalid candidates (crash/timeout/infeasible) are kept for audit
but excluded from rankings. Records are immutable once inserted; mutations
are serialized through a single writer lock while reads stay lock-free.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, NamedTuple

ORIGINS = ("seed", "generated", "imported")

RECORD_KEYS = ("id", "task_id", "source_text", "fitness", "origin", "valid", "created_at")


class RecordRejected(ValueError):
    """A record violates store invariants (empty source, bad fitness, ...)."""


class EmptyDatabaseError(LookupError):
    """A ranking was requested for a task with no valid records."""


class DatabaseFormatError(ValueError):
    """A database file is malformed; the message names the offending line."""


def normalize_source(text: str) -> str:
    """Trim outer whitespace of the whole text and of each line, nothing more."""
    return "\n".join(line.strip() for line in text.strip().splitlines())


@dataclass(frozen=True)
class AlgorithmRecord:
    """One candidate heuristic with its evaluation outcome.

    ``fitness`` is the average gap percent (lower is better) and must be
    finite whenever ``valid`` is true; invalid records carry ``None``.
    ``id`` and ``created_at`` are assigned by the store on insertion unless
    supplied (imports preserve them).
    """

    task_id: str
    source_text: str
    fitness: float | None
    origin: str = "generated"
    valid: bool = True
    id: int | None = None
    created_at: int | None = None

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "task_id": self.task_id,
            "source_text": self.source_text,
            "fitness": self.fitness,
            "origin": self.origin,
            "valid": self.valid,
            "created_at": self.created_at,
        }


class InsertResult(NamedTuple):
    id: int
    duplicate: bool


def _check_record(record: AlgorithmRecord) -> None:
    if not record.source_text or not normalize_source(record.source_text):
        raise RecordRejected("source_text must be non-empty")
    if record.origin not in ORIGINS:
        raise RecordRejected(f"unknown origin {record.origin!r}")
    if record.valid:
        if record.fitness is None or not math.isfinite(record.fitness):
            raise RecordRejected("valid records require a finite fitness")
    if record.fitness is not None and not isinstance(record.fitness, (int, float)):
        raise RecordRejected("fitness must be a real number or None")


class AlgorithmStore:
    """In-memory algorithm database with JSONL persistence.

    Deduplication is scoped per task: the same code string submitted for two
    different tasks forms two distinct records.
    """

    def __init__(self) -> None:
        self._records: dict[int, AlgorithmRecord] = {}
        self._by_norm: dict[tuple[str, str], int] = {}
        self._next_id = 1
        self._next_seq = 0
        self._write_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: int) -> bool:
        return record_id in self._records

    def get(self, record_id: int) -> AlgorithmRecord:
        return self._records[record_id]

    def records(self) -> list[AlgorithmRecord]:
        """All records ordered by id."""
        return [self._records[i] for i in sorted(self._records)]

    def task_ids(self) -> list[str]:
        return sorted({r.task_id for r in self._records.values()})

    def find_by_source(self, task_id: str, source_text: str) -> int | None:
        """Id of the record whose normalized source matches, if any."""
        return self._by_norm.get((task_id, normalize_source(source_text)))

    def insert(self, record: AlgorithmRecord) -> InsertResult:
        """Store ``record`` unless an identical normalized source exists.

        Returns the new id, or the existing id with the duplicate flag set.
        """
        _check_record(record)
        key = (record.task_id, normalize_source(record.source_text))
        with self._write_lock:
            existing = self._by_norm.get(key)
            if existing is not None:
                return InsertResult(existing, True)
            record_id = record.id if record.id is not None else self._next_id
            if record_id in self._records:
                raise RecordRejected(f"id {record_id} already in store")
            created_at = record.created_at if record.created_at is not None else self._next_seq
            self._next_id = max(self._next_id, record_id + 1)
            self._next_seq = max(self._next_seq, created_at + 1)
            stored = replace(record, id=record_id, created_at=created_at)
            self._records[record_id] = stored
            self._by_norm[key] = record_id
            return InsertResult(record_id, False)

    def ranked(self, task_id: str) -> list[int]:
        """Valid record ids for ``task_id``, best first (ascending gap).

        Ties break by insertion order so replays are deterministic.
        """
        valid = [r for r in self._records.values() if r.task_id == task_id and r.valid]
        if not valid:
            raise EmptyDatabaseError(f"no valid records for task {task_id!r}")
        valid.sort(key=lambda r: (r.fitness, r.created_at))
        return [r.id for r in valid]

    def valid_count(self, task_id: str) -> int:
        return sum(1 for r in self._records.values() if r.task_id == task_id and r.valid)

    def remove(self, ids: Iterable[int]) -> int:
        """Remove the given ids; absent ids are ignored. Returns count removed."""
        removed = 0
        with self._write_lock:
            for record_id in ids:
                record = self._records.pop(record_id, None)
                if record is None:
                    continue
                self._by_norm.pop((record.task_id, normalize_source(record.source_text)), None)
                removed += 1
        return removed

    def export_jsonl(self, path: str | Path) -> int:
        """Write one record object per line, ordered by id. Returns count."""
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for record in self.records():
                fh.write(json.dumps(record.to_json_obj()) + "\n")
        return len(self._records)

    def import_jsonl(self, path: str | Path) -> int:
        """Load records from ``path``; duplicates are skipped. Returns count imported."""
        path = Path(path)
        imported = 0
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatabaseFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
                if not isinstance(obj, dict):
                    raise DatabaseFormatError(f"line {lineno}: expected a record object")
                missing = [k for k in RECORD_KEYS if k not in obj]
                if missing:
                    raise DatabaseFormatError(f"line {lineno}: missing keys {missing}")
                try:
                    record = AlgorithmRecord(
                        task_id=obj["task_id"],
                        source_text=obj["source_text"],
                        fitness=obj["fitness"],
                        origin=obj["origin"],
                        valid=obj["valid"],
                        id=obj["id"],
                        created_at=obj["created_at"],
                    )
                    result = self.insert(record)
                except (RecordRejected, TypeError) as exc:
                    raise DatabaseFormatError(f"line {lineno}: {exc}") from exc
                if not result.duplicate:
                    imported += 1
        return imported

    def digest(self) -> str:
        """SHA-256 over the canonical serialization; changes iff content changes."""
        h = hashlib.sha256()
        for record in self.records():
            h.update(json.dumps(record.to_json_obj()).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()
