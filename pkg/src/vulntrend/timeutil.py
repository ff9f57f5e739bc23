"""UTC timestamp helpers and the calendar-month value type."""

from __future__ import annotations

import calendar
import re
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

from .errors import InvalidMonth

UTC = timezone.utc

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def as_utc(ts: datetime) -> datetime:
    """Naive timestamps are taken to be UTC; aware ones are converted."""
    if ts.tzinfo is None:
        return ts.replace(tzinfo=UTC)
    return ts.astimezone(UTC)


def to_minute(ts: datetime) -> datetime:
    return as_utc(ts).replace(second=0, microsecond=0)


def format_minute(ts: datetime) -> str:
    return as_utc(ts).strftime("%Y-%m-%dT%H:%MZ")


def parse_minute(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%MZ").replace(tzinfo=UTC)


def format_seconds(ts: datetime) -> str:
    return as_utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_seconds(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=UTC)


@dataclass(frozen=True, order=True)
class Month:
    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12 or not 1 <= self.year <= 9999:
            raise InvalidMonth(f"invalid month: {self.year:04d}-{self.month:02d}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        m = _MONTH_RE.match(text.strip())
        if not m:
            raise InvalidMonth(f"month must look like YYYY-MM, got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def of(cls, ts: datetime | date) -> "Month":
        return cls(ts.year, ts.month)

    @property
    def num_days(self) -> int:
        return calendar.monthrange(self.year, self.month)[1]

    def days(self) -> range:
        return range(1, self.num_days + 1)

    def start(self) -> datetime:
        return datetime(self.year, self.month, 1, tzinfo=UTC)

    def end(self) -> datetime:
        """Last representable minute of the month."""
        return self.start() + timedelta(days=self.num_days) - timedelta(minutes=1)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"
