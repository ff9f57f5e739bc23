"""Monthly trend analytics: breakdowns, top-k rankings, daily series, peaks."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from fractions import Fraction
from typing import Optional

from .store import RecordStore
from .taxonomy import VulnClass
from .timeutil import Month

CLASSES = tuple(VulnClass)


def round_half_up_percent(count: int, total: int) -> int:
    """Integer percentage 100*count/total rounded half up (0 if total is 0)."""
    if total <= 0:
        return 0
    return (200 * count + total) // (2 * total)


@dataclass(frozen=True)
class MonthlyBreakdown:
    month: Month
    total: int
    counts: dict[VulnClass, int]
    percents: dict[VulnClass, int]

    def share(self, cls: VulnClass) -> Fraction:
        """Exact, unrounded share of ``cls`` in the month."""
        return Fraction(self.counts[cls], self.total) if self.total else Fraction(0)


@dataclass(frozen=True)
class TopEntry:
    vuln_class: VulnClass
    count: int
    percent: int


@dataclass(frozen=True)
class TopKTable:
    month: Month
    k: int
    entries: tuple[TopEntry, ...]


@dataclass(frozen=True)
class DailySeries:
    month: Month
    counts: dict[int, dict[VulnClass, int]]

    def for_class(self, cls: VulnClass) -> list[int]:
        return [self.counts[d][cls] for d in self.month.days()]

    def totals(self) -> list[int]:
        return [sum(self.counts[d].values()) for d in self.month.days()]


@dataclass(frozen=True)
class Peak:
    date: date
    vuln_class: VulnClass
    count: int
    trailing_mean: float
    ratio: float


def breakdown_from_counts(month: Month, counts: dict[VulnClass, int]) -> MonthlyBreakdown:
    full = {c: int(counts.get(c, 0)) for c in CLASSES}
    total = sum(full.values())
    percents = {c: round_half_up_percent(n, total) for c, n in full.items()}
    return MonthlyBreakdown(month, total, full, percents)


def monthly_breakdown(store: RecordStore, month: Month) -> MonthlyBreakdown:
    counts = {c: 0 for c in CLASSES}
    for rec in store.records_in_month(month):
        counts[rec.vuln_class] += 1
    return breakdown_from_counts(month, counts)


def top_k(breakdown: MonthlyBreakdown, k: int = 3) -> TopKTable:
    """Classes ranked by raw count; ties go to the alphabetically first name."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(
        (c for c in CLASSES if breakdown.counts[c] > 0),
        key=lambda c: (-breakdown.counts[c], c.value),
    )
    entries = tuple(TopEntry(c, breakdown.counts[c], breakdown.percents[c]) for c in ranked[:k])
    return TopKTable(breakdown.month, k, entries)


def daily_series(store: RecordStore, month: Month) -> DailySeries:
    return DailySeries(month, store.counts_by_day(month))


def detect_peaks(
    series: DailySeries,
    vuln_class: VulnClass,
    factor: float = 3.0,
    min_count: int = 5,
    trailing_window_days: int = 7,
) -> list[Peak]:
    """Days where ``vuln_class`` spikes above its recent level.

    A day is a peak when its count is at least ``min_count`` and at least
    ``factor`` times the mean count over the preceding
    ``trailing_window_days`` days.  Days before the start of the month count
    as zero.
    """
    if factor <= 1:
        raise ValueError("factor must be > 1")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if trailing_window_days < 1:
        raise ValueError("trailing_window_days must be >= 1")
    values = series.for_class(vuln_class)
    peaks = []
    for i, count in enumerate(values):
        window_sum = sum(values[max(0, i - trailing_window_days) : i])
        # compare count >= factor * (window_sum / window) without dividing
        if count >= min_count and count * trailing_window_days >= factor * window_sum:
            mean = window_sum / trailing_window_days
            peaks.append(
                Peak(
                    date=date(series.month.year, series.month.month, i + 1),
                    vuln_class=vuln_class,
                    count=count,
                    trailing_mean=mean,
                    ratio=count / max(mean, 1.0),
                )
            )
    return peaks


def detect_all_peaks(
    series: DailySeries,
    factor: float = 3.0,
    min_count: int = 5,
    trailing_window_days: int = 7,
) -> list[Peak]:
    """Peaks of every class, ordered by date then class."""
    order = {c: i for i, c in enumerate(CLASSES)}
    found = [p for c in CLASSES for p in detect_peaks(series, c, factor, min_count, trailing_window_days)]
    return sorted(found, key=lambda p: (p.date, order[p.vuln_class]))


@dataclass(frozen=True)
class ReportSettings:
    k: int = 3
    peak_factor: float = 3.0
    peak_min_count: int = 5
    peak_window_days: int = 7
    last_n: int = 50


@dataclass(frozen=True)
class MonthReport:
    breakdown: MonthlyBreakdown
    top: TopKTable
    series: DailySeries
    peaks: list[Peak]


def month_report(store: RecordStore, month: Month, settings: Optional[ReportSettings] = None) -> MonthReport:
    settings = settings or ReportSettings()
    # build every view from one snapshot so they agree with each other
    records = store.records_in_month(month)
    counts = {c: 0 for c in CLASSES}
    daily = {d: {c: 0 for c in CLASSES} for d in month.days()}
    for rec in records:
        counts[rec.vuln_class] += 1
        daily[rec.observed_at.day][rec.vuln_class] += 1
    breakdown = breakdown_from_counts(month, counts)
    series = DailySeries(month, daily)
    peaks = detect_all_peaks(series, settings.peak_factor, settings.peak_min_count, settings.peak_window_days)
    return MonthReport(breakdown, top_k(breakdown, settings.k), series, peaks)
