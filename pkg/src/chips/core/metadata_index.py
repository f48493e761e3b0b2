"""SQLite-backed metadata index with typed comparator queries.

Join semantics: records sharing an image-record id form one group; a
conjunction matches a group when every predicate is satisfied by some entry
in the group (across sources), and the result is every record of every
matching group, ordered by record id. Numeric order comparators apply only
to typed numeric entries; text entries never match them.
"""

from __future__ import annotations

import math
import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from ..dicom.metadata import MetadataRecord
from .errors import BadComparator

Value = Union[str, int, float]

_OP_ALIASES = {"≠": "!=", "≤": "<=", "≥": ">=", "==": "="}
OPERATORS = frozenset({"=", "!=", "<", "<=", ">", ">=", "contains"})
_ORDER_OPS = frozenset({"<", "<=", ">", ">="})


@dataclass(frozen=True)
class Predicate:
    key: str
    op: str
    value: Value

    def normalized(self) -> "Predicate":
        op = _OP_ALIASES.get(self.op, self.op)
        if op not in OPERATORS:
            raise BadComparator(f"unknown comparator {self.op!r}")
        if not self.key:
            raise BadComparator("predicate key must be non-empty")
        return Predicate(self.key, op, self.value)


def _numeric(value: Value) -> float | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    try:
        parsed = float(value)
    except (TypeError, ValueError):
        return None
    return parsed if math.isfinite(parsed) else None


_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta_records (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    image_id TEXT NOT NULL,
    source TEXT NOT NULL,
    provenance TEXT NOT NULL,
    UNIQUE (image_id, source, provenance)
);
CREATE TABLE IF NOT EXISTS meta_entries (
    record_id INTEGER NOT NULL REFERENCES meta_records(id) ON DELETE CASCADE,
    key TEXT NOT NULL,
    value_type TEXT NOT NULL,
    text_value TEXT,
    num_value NUMERIC
);
CREATE INDEX IF NOT EXISTS idx_entries_key_text ON meta_entries (key, text_value);
CREATE INDEX IF NOT EXISTS idx_entries_key_num ON meta_entries (key, num_value);
CREATE INDEX IF NOT EXISTS idx_entries_record ON meta_entries (record_id);
CREATE INDEX IF NOT EXISTS idx_records_image ON meta_records (image_id);
"""


class MetadataIndex:
    def __init__(self, db_path: Path | str = ":memory:"):
        self._conn = sqlite3.connect(str(db_path), check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        self._lock = threading.RLock()
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- writes ----------------------------------------------------------------

    def add_record(self, record: MetadataRecord) -> int:
        return self.add_records([record])[0]

    def add_records(self, records: list[MetadataRecord]) -> list[int]:
        """Insert atomically; an existing (image, source, provenance) record
        is replaced."""
        ids = []
        with self._lock, self._conn:
            for record in records:
                self._conn.execute(
                    "DELETE FROM meta_records WHERE image_id=? AND source=? AND provenance=?",
                    (record.image_id, record.source, record.provenance),
                )
                cursor = self._conn.execute(
                    "INSERT INTO meta_records (image_id, source, provenance) VALUES (?,?,?)",
                    (record.image_id, record.source, record.provenance),
                )
                record_id = cursor.lastrowid
                for key, value in record.entries.items():
                    if isinstance(value, bool):
                        value = str(value)
                    if isinstance(value, int):
                        row = (record_id, key, "int", None, value)
                    elif isinstance(value, float):
                        row = (record_id, key, "real", None, value)
                    else:
                        row = (record_id, key, "text", str(value), None)
                    self._conn.execute(
                        "INSERT INTO meta_entries (record_id, key, value_type, text_value, num_value)"
                        " VALUES (?,?,?,?,?)",
                        row,
                    )
                ids.append(record_id)
        return ids

    # -- reads ------------------------------------------------------------------

    def count(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) FROM meta_records").fetchone()[0]

    def _records_by_ids(self, image_ids: set[str] | None) -> list[tuple[int, MetadataRecord]]:
        with self._lock:
            if image_ids is None:
                rows = self._conn.execute(
                    "SELECT id, image_id, source, provenance FROM meta_records ORDER BY id"
                ).fetchall()
            else:
                if not image_ids:
                    return []
                marks = ",".join("?" for _ in image_ids)
                rows = self._conn.execute(
                    f"SELECT id, image_id, source, provenance FROM meta_records"
                    f" WHERE image_id IN ({marks}) ORDER BY id",
                    sorted(image_ids),
                ).fetchall()
            out = []
            for record_id, image_id, source, provenance in rows:
                entries: dict[str, Value] = {}
                for key, value_type, text_value, num_value in self._conn.execute(
                    "SELECT key, value_type, text_value, num_value FROM meta_entries"
                    " WHERE record_id=?",
                    (record_id,),
                ):
                    if value_type == "int":
                        entries[key] = int(num_value)
                    elif value_type == "real":
                        entries[key] = float(num_value)
                    else:
                        entries[key] = text_value
                out.append((record_id, MetadataRecord(image_id, source, provenance, entries)))
            return out

    def _image_ids_for(self, predicate: Predicate) -> set[str]:
        key = predicate.key
        raw = str(predicate.value)
        number = _numeric(predicate.value)
        base = (
            "SELECT DISTINCT r.image_id FROM meta_entries e"
            " JOIN meta_records r ON r.id = e.record_id WHERE e.key = ?"
        )
        op = predicate.op
        with self._lock:
            if op == "=":
                clause = "(e.value_type = 'text' AND e.text_value = ?)"
                params: list = [key, raw]
                if number is not None:
                    clause += " OR (e.value_type != 'text' AND e.num_value = ?)"
                    params.append(number)
                rows = self._conn.execute(f"{base} AND ({clause})", params).fetchall()
            elif op == "!=":
                clause = "(e.value_type = 'text' AND e.text_value != ?)"
                params = [key, raw]
                if number is not None:
                    clause += " OR (e.value_type != 'text' AND e.num_value != ?)"
                    params.append(number)
                else:
                    # a numeric entry is never equal to a non-numeric literal
                    clause += " OR (e.value_type != 'text')"
                rows = self._conn.execute(f"{base} AND ({clause})", params).fetchall()
            elif op in _ORDER_OPS:
                if number is None:
                    return set()
                rows = self._conn.execute(
                    f"{base} AND e.value_type != 'text' AND e.num_value {op} ?",
                    (key, number),
                ).fetchall()
            else:  # contains
                rows = self._conn.execute(
                    f"{base} AND e.value_type = 'text' AND instr(e.text_value, ?) > 0",
                    (key, raw),
                ).fetchall()
        return {row[0] for row in rows}

    def query(self, predicates: list[Predicate]) -> list[tuple[int, MetadataRecord]]:
        """Conjunction query; an empty conjunction returns every record."""
        normalized = [p.normalized() for p in predicates]
        image_ids: set[str] | None = None
        for predicate in normalized:
            ids = self._image_ids_for(predicate)
            image_ids = ids if image_ids is None else (image_ids & ids)
            if not image_ids:
                return []
        return self._records_by_ids(image_ids)
