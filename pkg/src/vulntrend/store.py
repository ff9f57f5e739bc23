"""Append-only JSON-lines record store with an in-memory index.

Each line of the store file is one record::

    {"id":1,"class":"injection","title":"...","discoverer":"...",
     "observed_at":"2018-02-15T10:04Z","source_id":"zeroday",
     "detail_url":"...","ingested_at":"2018-02-15T10:05:00Z"}

The whole file is loaded and indexed when the store is opened; appends are
fsync'd before :meth:`RecordStore.append` returns.
"""

from __future__ import annotations

import bisect
import json
import logging
import os
import threading
from collections import defaultdict
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterator, Optional

from .errors import InvalidRecord, StorageError
from .taxonomy import VulnClass
from .timeutil import (
    Month,
    as_utc,
    format_minute,
    format_seconds,
    parse_minute,
    parse_seconds,
)

log = logging.getLogger(__name__)

RECORD_KEYS = (
    "id",
    "class",
    "title",
    "discoverer",
    "observed_at",
    "source_id",
    "detail_url",
    "ingested_at",
)
FUTURE_SLACK = timedelta(hours=24)


@dataclass(frozen=True)
class VulnRecord:
    vuln_class: VulnClass
    title: str
    discoverer: str
    observed_at: datetime
    source_id: str
    detail_url: str
    ingested_at: datetime
    id: Optional[int] = None

    def __post_init__(self) -> None:
        # normalise precision so that serialisation round-trips exactly
        object.__setattr__(self, "observed_at", as_utc(self.observed_at).replace(second=0, microsecond=0))
        object.__setattr__(self, "ingested_at", as_utc(self.ingested_at).replace(microsecond=0))

    def validate(self) -> None:
        if not isinstance(self.vuln_class, VulnClass):
            raise InvalidRecord(f"class must be a VulnClass, got {self.vuln_class!r}")
        if not self.title or not self.title.strip():
            raise InvalidRecord("title must be non-empty")
        if self.observed_at > self.ingested_at + FUTURE_SLACK:
            raise InvalidRecord(
                f"observed_at {format_minute(self.observed_at)} is more than 24h after "
                f"ingested_at {format_seconds(self.ingested_at)}"
            )

    def to_json(self) -> str:
        obj = {
            "id": self.id,
            "class": self.vuln_class.value,
            "title": self.title,
            "discoverer": self.discoverer,
            "observed_at": format_minute(self.observed_at),
            "source_id": self.source_id,
            "detail_url": self.detail_url,
            "ingested_at": format_seconds(self.ingested_at),
        }
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "VulnRecord":
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("record line is not a JSON object")
        keys = set(obj)
        if keys != set(RECORD_KEYS):
            extra = sorted(keys - set(RECORD_KEYS))
            missing = sorted(set(RECORD_KEYS) - keys)
            raise ValueError(f"bad record keys (unknown: {extra}, missing: {missing})")
        if not isinstance(obj["id"], int) or isinstance(obj["id"], bool):
            raise ValueError("id must be an integer")
        for key in ("title", "discoverer", "source_id", "detail_url"):
            if not isinstance(obj[key], str):
                raise ValueError(f"{key} must be a string")
        rec = cls(
            id=obj["id"],
            vuln_class=VulnClass(obj["class"]),
            title=obj["title"],
            discoverer=obj["discoverer"],
            observed_at=parse_minute(obj["observed_at"]),
            source_id=obj["source_id"],
            detail_url=obj["detail_url"],
            ingested_at=parse_seconds(obj["ingested_at"]),
        )
        rec.validate()
        return rec


def _order_key(rec: VulnRecord) -> tuple[datetime, int]:
    return (rec.observed_at, rec.id)


class RecordStore:
    """Single-writer, many-reader record store backed by one JSONL file.

    Readers always see the state after the last completed append; no record
    is ever modified or removed.
    """

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)
        self._lock = threading.RLock()
        self._records: list[VulnRecord] = []
        self._by_class: dict[VulnClass, list[VulnRecord]] = defaultdict(list)
        self._watermarks: dict[str, datetime] = {}
        self._fh = None
        self._valid_size: Optional[int] = None
        self._load()

    # -- lifecycle

    def _load(self) -> None:
        if not self.path.exists():
            return
        try:
            raw = self.path.read_bytes()
        except OSError as exc:
            raise StorageError(f"cannot read store {self.path}: {exc}") from exc
        lines = raw.split(b"\n")
        tail = lines.pop()  # b"" when the file ends in a newline
        if tail:
            # an unterminated last line can only be a torn write; drop it
            log.warning("%s: ignoring unterminated trailing record (%d bytes)", self.path, len(tail))
            self._valid_size = len(raw) - len(tail)
        last_id = 0
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = VulnRecord.from_json(line.decode("utf-8"))
            except (ValueError, KeyError, TypeError, InvalidRecord) as exc:
                raise StorageError(f"{self.path}:{lineno}: {exc}") from exc
            if rec.id <= last_id:
                raise StorageError(f"{self.path}:{lineno}: id {rec.id} not increasing")
            last_id = rec.id
            self._index(rec)

    def _truncate_to(self, size: int) -> None:
        try:
            with self.path.open("r+b") as fh:
                fh.truncate(size)
        except OSError as exc:
            raise StorageError(f"cannot repair store {self.path}: {exc}") from exc

    def open_for_append(self) -> None:
        """Open (creating if needed) the backing file; fails fast if unwritable."""
        with self._lock:
            if self._fh is not None:
                return
            try:
                if self.path.parent != Path(""):
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                if self._valid_size is not None:
                    # only the writer repairs a torn tail; readers just skip it
                    self._truncate_to(self._valid_size)
                    self._valid_size = None
                self._fh = self.path.open("ab")
            except OSError as exc:
                raise StorageError(f"cannot open store {self.path} for writing: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "RecordStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- writes

    def _index(self, rec: VulnRecord) -> None:
        self._records.append(rec)
        bisect.insort(self._by_class[rec.vuln_class], rec, key=_order_key)
        prev = self._watermarks.get(rec.source_id)
        if prev is None or rec.observed_at > prev:
            self._watermarks[rec.source_id] = rec.observed_at

    def append(self, record: VulnRecord) -> int:
        """Persist ``record`` and return its newly assigned id."""
        record.validate()
        with self._lock:
            self.open_for_append()
            new_id = (self._records[-1].id if self._records else 0) + 1
            stored = replace(record, id=new_id)
            data = (stored.to_json() + "\n").encode("utf-8")
            try:
                self._fh.write(data)
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StorageError(f"write to {self.path} failed: {exc}") from exc
            self._index(stored)
            return new_id

    # -- reads

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def __iter__(self) -> Iterator[VulnRecord]:
        return iter(self.all_records())

    def all_records(self) -> list[VulnRecord]:
        with self._lock:
            return list(self._records)

    def query_by_class_and_range(self, vuln_class: VulnClass, start: datetime, end: datetime) -> list[VulnRecord]:
        """Records of ``vuln_class`` with start <= observed_at <= end, oldest first."""
        start, end = as_utc(start), as_utc(end)
        if start > end:
            raise ValueError("start must not be after end")
        with self._lock:
            recs = self._by_class.get(vuln_class, [])
            lo = bisect.bisect_left(recs, (start, 0), key=_order_key)
            hi = bisect.bisect_right(recs, (end, float("inf")), key=_order_key)
            return recs[lo:hi]

    def last_n_by_class(self, vuln_class: VulnClass, n: int = 50) -> list[VulnRecord]:
        """Up to ``n`` most recent records of the class, newest first."""
        if n < 1:
            raise ValueError("n must be >= 1")
        with self._lock:
            recs = self._by_class.get(vuln_class, [])
            return list(reversed(recs[-n:]))

    def watermark(self, source_id: str) -> Optional[datetime]:
        with self._lock:
            return self._watermarks.get(source_id)

    def records_in_month(self, month: Month) -> list[VulnRecord]:
        lo, hi = month.start(), month.end()
        with self._lock:
            return [r for r in self._records if lo <= r.observed_at <= hi]

    def counts_by_day(self, month: Month) -> dict[int, dict[VulnClass, int]]:
        """Dense day -> class -> count table for one calendar month."""
        counts = {day: {c: 0 for c in VulnClass} for day in month.days()}
        for rec in self.records_in_month(month):
            counts[rec.observed_at.day][rec.vuln_class] += 1
        return counts
