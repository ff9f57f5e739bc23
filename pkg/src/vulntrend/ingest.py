"""Per-source ingestion pipeline and the polling daemon.

One run over a source goes fetch -> parse -> watermark filter -> classify ->
dedup -> append.  The dedup check and the append for an entry happen under a
single pipeline-wide write lock, so concurrent pollers can never both accept
the same vulnerability.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .dedup import DedupConfig, DedupVerdict, check_duplicate
from .errors import ConfigError, FetchError, ParseError, StorageError
from .sources import (
    FetchPolicy,
    RawEntry,
    SourceDescriptor,
    entries_after,
    fetch_page,
    is_plausible,
    parse_listing,
)
from .store import RecordStore, VulnRecord
from .taxonomy import KeywordRule, VulnClass, classify, default_ruleset
from .timeutil import UTC, as_utc, format_seconds, parse_seconds

log = logging.getLogger(__name__)

MAX_BACKOFF_SECONDS = 15 * 60


class Clock(Protocol):
    def now(self) -> datetime: ...

    def sleep(self, seconds: float, stop: threading.Event) -> bool:
        """Wait ``seconds``; return True if ``stop`` was set meanwhile."""
        ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(UTC)

    def sleep(self, seconds: float, stop: threading.Event) -> bool:
        return stop.wait(seconds)


class ManualClock:
    """Clock whose sleeps return at once and advance simulated time.

    Every requested delay is appended to :attr:`sleeps`.
    """

    def __init__(self, start: datetime) -> None:
        self._now = as_utc(start)
        self._lock = threading.Lock()
        self.sleeps: list[float] = []

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now += timedelta(seconds=seconds)

    def sleep(self, seconds: float, stop: threading.Event) -> bool:
        if stop.is_set():
            return True
        with self._lock:
            self.sleeps.append(seconds)
            self._now += timedelta(seconds=seconds)
        return stop.is_set()


def backoff_delay(interval: float, failures: int, cap: float = MAX_BACKOFF_SECONDS) -> float:
    """Delay before the next poll after ``failures`` consecutive failed runs.

    Healthy sources poll every ``interval``; the n-th consecutive failure
    waits ``interval * 2**(n-1)``, never more than ``cap``.
    """
    if failures <= 0:
        return interval
    return min(interval * 2 ** (failures - 1), cap)


@dataclass
class IngestSummary:
    source_id: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    entries_seen: int = 0
    entries_after_watermark: int = 0
    duplicates_skipped: int = 0
    malformed_skipped: int = 0
    records_appended: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def log_line(self) -> str:
        parts = [
            f"source_id={self.source_id}",
            f"started_at={format_seconds(self.started_at)}",
            f"finished_at={format_seconds(self.finished_at) if self.finished_at else '-'}",
            f"entries_seen={self.entries_seen}",
            f"entries_after_watermark={self.entries_after_watermark}",
            f"duplicates_skipped={self.duplicates_skipped}",
            f"malformed_skipped={self.malformed_skipped}",
            f"records_appended={self.records_appended}",
        ]
        if self.error:
            parts.append(f"error={json.dumps(self.error)}")
        return " ".join(parts)


class Pipeline:
    """Runs ingestion for individual sources against one store."""

    def __init__(
        self,
        store: RecordStore,
        rules: Optional[Sequence[KeywordRule]] = None,
        dedup: DedupConfig = DedupConfig(),
        policy: FetchPolicy = FetchPolicy(),
        clock: Optional[Clock] = None,
        fetcher: Callable[[str, FetchPolicy], str] = fetch_page,
    ) -> None:
        self.store = store
        self.rules = list(rules) if rules is not None else default_ruleset()
        self.dedup = dedup
        self.policy = policy
        self.clock = clock or SystemClock()
        self.fetcher = fetcher
        self._write_lock = threading.Lock()
        self._no_stop = threading.Event()

    def _fetch_all(self, source: SourceDescriptor) -> tuple[list[RawEntry], int]:
        entries: list[RawEntry] = []
        malformed = 0
        for i, url in enumerate(source.page_urls):
            if i and self.policy.min_delay_between_requests_seconds:
                self.clock.sleep(self.policy.min_delay_between_requests_seconds, self._no_stop)
            listing = parse_listing(source.adapter_kind, self.fetcher(url, self.policy), source.id)
            entries.extend(listing.entries)
            malformed += listing.skipped
        return entries, malformed

    def run_once(self, source: SourceDescriptor) -> IngestSummary:
        """Ingest everything newer than the source's watermark.

        Fetch and parse failures are reported in ``summary.error``;
        :class:`StorageError` propagates.
        """
        summary = IngestSummary(source_id=source.id, started_at=self.clock.now())
        watermark = self.store.watermark(source.id)
        try:
            entries, malformed = self._fetch_all(source)
        except (FetchError, ParseError) as exc:
            summary.error = f"{type(exc).__name__}: {exc}"
            summary.finished_at = self.clock.now()
            log.warning("ingest %s", summary.log_line())
            return summary

        summary.entries_seen = len(entries) + malformed
        # entries dated beyond the future slack are treated as malformed
        fetched_at = self.clock.now()
        plausible = [e for e in entries if is_plausible(e, fetched_at)]
        malformed += len(entries) - len(plausible)
        fresh = entries_after(plausible, watermark)
        summary.malformed_skipped = malformed
        summary.entries_after_watermark = len(fresh) + malformed

        # oldest first, so ids follow observation time within a run
        for entry in sorted(fresh, key=lambda e: e.observed_at):
            if self._accept(entry):
                summary.records_appended += 1
            else:
                summary.duplicates_skipped += 1
        summary.finished_at = self.clock.now()
        log.info("ingest %s", summary.log_line())
        return summary

    def _check_duplicate(self, title: str, vuln_class: VulnClass, observed_at: datetime) -> DedupVerdict:
        # Look both before and after the entry's own timestamp so the verdict
        # does not depend on which of two concurrent sources was stored first.
        window = timedelta(days=self.dedup.window_days)
        verdicts = [
            check_duplicate(title, vuln_class, self.store.query_by_class_and_range, self.dedup, now=at)
            for at in (observed_at, observed_at + window)
        ]
        hits = [v for v in verdicts if v.is_duplicate]
        if not hits:
            return verdicts[0]
        return max(hits, key=lambda v: (v.similarity, -v.matched_record_id))

    def _accept(self, entry: RawEntry) -> bool:
        result = classify(entry.title, self.rules)
        with self._write_lock:
            verdict = self._check_duplicate(entry.title, result.vuln_class, entry.observed_at)
            if verdict.is_duplicate:
                log.debug(
                    "duplicate %r of record %s (similarity %.2f)",
                    entry.title,
                    verdict.matched_record_id,
                    verdict.similarity,
                )
                return False
            self.store.append(
                VulnRecord(
                    vuln_class=result.vuln_class,
                    title=entry.title,
                    discoverer=entry.discoverer,
                    observed_at=entry.observed_at,
                    source_id=entry.source_id,
                    detail_url=entry.detail_url,
                    ingested_at=self.clock.now(),
                )
            )
            return True


class SourceState(str, enum.Enum):
    RUNNING = "Running"
    BACKING_OFF = "BackingOff"
    STOPPED = "Stopped"


@dataclass
class SourceStatus:
    source_id: str
    state: SourceState = SourceState.STOPPED
    started_at: Optional[datetime] = None
    uptime_seconds: float = 0.0
    consecutive_failures: int = 0
    last_success_at: Optional[datetime] = None
    last_error: Optional[str] = None
    total_records_ingested: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["state"] = self.state.value
        for key in ("started_at", "last_success_at"):
            d[key] = format_seconds(d[key]) if d[key] else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SourceStatus":
        return cls(
            source_id=d["source_id"],
            state=SourceState(d["state"]),
            started_at=parse_seconds(d["started_at"]) if d.get("started_at") else None,
            uptime_seconds=float(d.get("uptime_seconds", 0.0)),
            consecutive_failures=int(d.get("consecutive_failures", 0)),
            last_success_at=parse_seconds(d["last_success_at"]) if d.get("last_success_at") else None,
            last_error=d.get("last_error"),
            total_records_ingested=int(d.get("total_records_ingested", 0)),
        )


class StatusBoard:
    """Thread-safe per-source operational state."""

    def __init__(self, source_ids: Sequence[str], clock: Clock) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self._status = {sid: SourceStatus(sid) for sid in source_ids}

    def started(self, source_id: str) -> None:
        with self._lock:
            st = self._status[source_id]
            st.state = SourceState.RUNNING
            st.started_at = self._clock.now()
            st.uptime_seconds = 0.0

    def record(self, summary: IngestSummary) -> SourceStatus:
        with self._lock:
            st = self._status[summary.source_id]
            if summary.ok:
                st.consecutive_failures = 0
                st.last_success_at = summary.finished_at
                st.state = SourceState.RUNNING
            else:
                st.consecutive_failures += 1
                st.last_error = summary.error
                st.state = SourceState.BACKING_OFF
            st.total_records_ingested += summary.records_appended
            return self._snapshot(st)

    def stopped(self, source_id: str) -> None:
        with self._lock:
            st = self._status[source_id]
            if st.state is not SourceState.STOPPED and st.started_at is not None:
                st.uptime_seconds = (self._clock.now() - st.started_at).total_seconds()
            st.state = SourceState.STOPPED

    def _snapshot(self, st: SourceStatus) -> SourceStatus:
        snap = SourceStatus(**{k: getattr(st, k) for k in st.__dataclass_fields__})
        if st.state is not SourceState.STOPPED and st.started_at is not None:
            snap.uptime_seconds = max(0.0, (self._clock.now() - st.started_at).total_seconds())
        return snap

    def snapshot(self) -> list[SourceStatus]:
        with self._lock:
            return [self._snapshot(st) for st in self._status.values()]

    def save(self, path: Path) -> None:
        data = json.dumps([s.to_dict() for s in self.snapshot()], indent=2) + "\n"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(data, encoding="utf-8")
        os.replace(tmp, path)


def load_status(path: Path, source_ids: Sequence[str]) -> list[SourceStatus]:
    """Status as last saved by a daemon; sources never seen are Stopped."""
    saved: dict[str, SourceStatus] = {}
    if path.exists():
        for d in json.loads(path.read_text(encoding="utf-8")):
            saved[d["source_id"]] = SourceStatus.from_dict(d)
    return [saved.get(sid, SourceStatus(sid)) for sid in source_ids]


def status_path_for(store_path: Path) -> Path:
    return store_path.with_name(store_path.name + ".status.json")


class Daemon:
    """Polls every enabled source on its own thread until stopped."""

    def __init__(
        self,
        pipeline: Pipeline,
        sources: Sequence[SourceDescriptor],
        clock: Optional[Clock] = None,
        on_cycle: Optional[Callable[[IngestSummary, SourceStatus], None]] = None,
        status_path: Optional[Path] = None,
    ) -> None:
        self.pipeline = pipeline
        self.sources = [s for s in sources if s.enabled]
        if not self.sources:
            raise ConfigError("no enabled sources to poll")
        self.clock = clock or pipeline.clock
        self.on_cycle = on_cycle
        self.status_path = status_path
        self.board = StatusBoard([s.id for s in sources], self.clock)
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.fatal: Optional[BaseException] = None

    def status(self) -> list[SourceStatus]:
        return self.board.snapshot()

    def stop(self) -> None:
        self._stop.set()

    @property
    def stopping(self) -> bool:
        return self._stop.is_set()

    def _save_status(self) -> None:
        if self.status_path is not None:
            try:
                self.board.save(self.status_path)
            except OSError as exc:
                log.warning("cannot write status file %s: %s", self.status_path, exc)

    def poll(self, source: SourceDescriptor, max_cycles: Optional[int] = None) -> None:
        """Poll loop for one source; runs in the calling thread."""
        self.board.started(source.id)
        cycles = 0
        try:
            while not self._stop.is_set():
                try:
                    summary = self.pipeline.run_once(source)
                except StorageError as exc:
                    log.error("storage failure while ingesting %s: %s", source.id, exc)
                    self.fatal = exc
                    self._stop.set()
                    break
                except Exception as exc:  # keep polling whatever a source throws at us
                    log.exception("unexpected error ingesting %s", source.id)
                    summary = IngestSummary(source.id, self.clock.now(), self.clock.now(), error=repr(exc))
                status = self.board.record(summary)
                self._save_status()
                if self.on_cycle is not None:
                    self.on_cycle(summary, status)
                cycles += 1
                if max_cycles is not None and cycles >= max_cycles:
                    break
                delay = backoff_delay(source.poll_interval_seconds, status.consecutive_failures)
                if self.clock.sleep(delay, self._stop):
                    break
        finally:
            self.board.stopped(source.id)
            self._save_status()

    def start(self, max_cycles: Optional[int] = None) -> None:
        for source in self.sources:
            t = threading.Thread(target=self.poll, args=(source, max_cycles), name=f"poll-{source.id}", daemon=True)
            self._threads.append(t)
            t.start()

    def join(self, timeout: Optional[float] = None) -> bool:
        """Wait for all pollers; True once every one has exited."""
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in self._threads:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            t.join(remaining)
        return not any(t.is_alive() for t in self._threads)

    def run(self, max_cycles: Optional[int] = None) -> None:
        """Start all pollers and block until they finish or we are interrupted.

        Re-raises a storage failure from any poller after shutdown.
        """
        self.start(max_cycles)
        try:
            # short joins keep the main thread responsive to KeyboardInterrupt
            while not self.join(timeout=0.2):
                pass
        except KeyboardInterrupt:
            log.info("interrupt received, stopping pollers")
            self.stop()
            self.join()
        if self.fatal is not None:
            raise self.fatal


def run_daemon(
    pipeline: Pipeline,
    sources: Sequence[SourceDescriptor],
    clock: Optional[Clock] = None,
    *,
    max_cycles: Optional[int] = None,
    on_cycle: Optional[Callable[[IngestSummary, SourceStatus], None]] = None,
    status_path: Optional[Path] = None,
) -> Daemon:
    """Run the polling daemon in the foreground; returns it once stopped."""
    daemon = Daemon(pipeline, sources, clock=clock, on_cycle=on_cycle, status_path=status_path)
    daemon.run(max_cycles=max_cycles)
    return daemon
