"""Static report artifacts: per-month JSON, stacked-bar SVG and HTML pages.

Output depends only on store content and settings, so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import html
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .analytics import CLASSES, MonthReport, ReportSettings, month_report
from .store import RecordStore
from .taxonomy import VulnClass
from .timeutil import Month, format_minute

FORMATS = ("json", "svg", "html")

# One fixed colour per class, in VulnClass order.
PALETTE: dict[VulnClass, str] = {
    VulnClass.INJECTION: "#d62728",
    VulnClass.BROKEN_AUTHENTICATION: "#8c564b",
    VulnClass.CROSS_SITE_REQUEST_FORGERY: "#e377c2",
    VulnClass.SERVER_SIDE_REQUEST_FORGERY: "#7f7f7f",
    VulnClass.CROSS_SITE_SCRIPTING: "#1f77b4",
    VulnClass.REMOTE_CODE_EXECUTION: "#ff7f0e",
    VulnClass.REMOTE_COMMAND_EXECUTION: "#bcbd22",
    VulnClass.DENIAL_OF_SERVICE: "#2ca02c",
    VulnClass.BUFFER_OVERFLOW: "#9467bd",
    VulnClass.PRIVILEGE_ESCALATION: "#17becf",
    VulnClass.ARBITRARY_FILE_MANIPULATION: "#aec7e8",
    VulnClass.DIRECTORY_TRAVERSAL: "#ffbb78",
    VulnClass.OTHER: "#c7c7c7",
}

SVG_WIDTH = 900
SVG_HEIGHT = 400


def report_to_dict(report: MonthReport) -> dict:
    b = report.breakdown
    return {
        "month": str(b.month),
        "total": b.total,
        "by_class": {c.value: {"count": b.counts[c], "percent": b.percents[c]} for c in CLASSES},
        "top": [{"class": e.vuln_class.value, "percent": e.percent} for e in report.top.entries],
        "daily": {
            f"{day:02d}": {c.value: n for c, n in per_class.items()}
            for day, per_class in sorted(report.series.counts.items())
        },
        "peaks": [
            {
                "date": p.date.isoformat(),
                "class": p.vuln_class.value,
                "count": p.count,
                "ratio": round(p.ratio, 4),
            }
            for p in report.peaks
        ],
    }


def render_json(report: MonthReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n"


def _nice_ceiling(value: int) -> int:
    """Smallest 1/2/5 x 10^n step multiple that covers ``value`` (at least 1)."""
    if value <= 5:
        return max(value, 1)
    step = 1
    while True:
        for mult in (1, 2, 5):
            if step * mult * 5 >= value:
                return step * mult * 5
        step *= 10


def render_svg(report: MonthReport, with_declaration: bool = True) -> str:
    """Stacked bar chart: one bar per day, one coloured segment per class."""
    series = report.series
    days = list(series.month.days())
    totals = series.totals()
    left, right, top, bottom = 50, 190, 36, 40
    plot_w = SVG_WIDTH - left - right
    plot_h = SVG_HEIGHT - top - bottom
    y_max = _nice_ceiling(max(totals, default=0))
    slot = plot_w / len(days)
    bar_w = slot * 0.8

    def y(value: float) -> float:
        return top + plot_h - plot_h * value / y_max

    out = []
    if with_declaration:
        out.append('<?xml version="1.0" encoding="UTF-8"?>')
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif">'
    )
    out.append(f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="#ffffff"/>')
    out.append(
        f'<text x="{left}" y="22" font-size="14" font-weight="bold">'
        f"Vulnerabilities per day, {series.month} (total {report.breakdown.total})</text>"
    )

    ticks = 5 if y_max >= 5 else y_max
    for i in range(ticks + 1):
        value = y_max * i / ticks
        yy = y(value)
        out.append(
            f'<line x1="{left}" y1="{yy:.2f}" x2="{left + plot_w}" y2="{yy:.2f}" stroke="#e0e0e0" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{left - 6}" y="{yy + 4:.2f}" font-size="10" text-anchor="end">{value:g}</text>'
        )

    for idx, day in enumerate(days):
        x = left + idx * slot + (slot - bar_w) / 2
        out.append(f'<g class="day" data-day="{day:02d}">')
        base = 0
        for cls in CLASSES:
            n = series.counts[day][cls]
            if not n:
                continue
            y_top, y_bot = y(base + n), y(base)
            out.append(
                f'<rect x="{x:.2f}" y="{y_top:.2f}" width="{bar_w:.2f}" height="{y_bot - y_top:.2f}" '
                f'fill="{PALETTE[cls]}"><title>{series.month}-{day:02d} {cls.label}: {n}</title></rect>'
            )
            base += n
        out.append("</g>")
        out.append(
            f'<text x="{x + bar_w / 2:.2f}" y="{top + plot_h + 14}" font-size="9" text-anchor="middle">{day}</text>'
        )

    out.append(
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="#333333" stroke-width="1"/>'
    )
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="#333333" stroke-width="1"/>')
    out.append(
        f'<text x="{left + plot_w / 2:.2f}" y="{SVG_HEIGHT - 8}" font-size="11" text-anchor="middle">day of month</text>'
    )

    legend_x = left + plot_w + 20
    out.append('<g class="legend">')
    for i, cls in enumerate(CLASSES):
        ly = top + i * 22
        out.append(f'<rect x="{legend_x}" y="{ly}" width="12" height="12" fill="{PALETTE[cls]}"/>')
        out.append(
            f'<text x="{legend_x + 18}" y="{ly + 10}" font-size="11">'
            f"{html.escape(cls.label)} ({report.breakdown.counts[cls]})</text>"
        )
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


_CSS = """
body { font-family: sans-serif; margin: 2em; color: #222; }
table { border-collapse: collapse; margin-bottom: 1.5em; }
th, td { border: 1px solid #ccc; padding: 3px 8px; text-align: left; }
td.num { text-align: right; }
.swatch { display: inline-block; width: 10px; height: 10px; margin-right: 6px; }
details { margin-bottom: 0.5em; }
""".strip()


def render_html(report: MonthReport, store: RecordStore, last_n: int = 50) -> str:
    esc = html.escape
    b = report.breakdown
    month = str(b.month)
    parts = [
        "<!DOCTYPE html>",
        '<html lang="en"><head><meta charset="utf-8">',
        f"<title>Vulnerability trends {month}</title>",
        f"<style>\n{_CSS}\n</style>",
        "</head><body>",
        f"<h1>Vulnerability trends: {month}</h1>",
        f"<p>{b.total} vulnerabilities recorded.</p>",
        f"<h2>Top {report.top.k}</h2>",
        "<table><tr><th>Rank</th><th>Class</th><th>Count</th><th>Percent</th></tr>",
    ]
    for rank, e in enumerate(report.top.entries, 1):
        parts.append(
            f'<tr><td class="num">{rank}</td><td>{esc(e.vuln_class.label)}</td>'
            f'<td class="num">{e.count}</td><td class="num">{e.percent}%</td></tr>'
        )
    parts.append("</table>")

    parts.append("<h2>Daily evolution</h2>")
    parts.append(render_svg(report, with_declaration=False))

    parts.append("<h2>By class</h2>")
    parts.append("<table><tr><th>Class</th><th>Count</th><th>Percent</th></tr>")
    for cls in CLASSES:
        parts.append(
            f'<tr><td><span class="swatch" style="background:{PALETTE[cls]}"></span>{esc(cls.label)}</td>'
            f'<td class="num">{b.counts[cls]}</td><td class="num">{b.percents[cls]}%</td></tr>'
        )
    parts.append("</table>")

    parts.append("<h2>Peaks</h2>")
    if report.peaks:
        parts.append("<table><tr><th>Date</th><th>Class</th><th>Count</th><th>Ratio</th></tr>")
        for p in report.peaks:
            parts.append(
                f"<tr><td>{p.date.isoformat()}</td><td>{esc(p.vuln_class.label)}</td>"
                f'<td class="num">{p.count}</td><td class="num">{p.ratio:.2f}</td></tr>'
            )
        parts.append("</table>")
    else:
        parts.append("<p>No peaks detected.</p>")

    parts.append(f"<h2>Last {last_n} per class</h2>")
    for cls in CLASSES:
        recent = store.last_n_by_class(cls, last_n)
        parts.append(f"<details><summary>{esc(cls.label)} ({len(recent)})</summary>")
        if recent:
            parts.append("<table><tr><th>Observed</th><th>Title</th><th>Discoverer</th><th>Source</th></tr>")
            for r in recent:
                parts.append(
                    f"<tr><td>{format_minute(r.observed_at)}</td><td>{esc(r.title)}</td>"
                    f"<td>{esc(r.discoverer)}</td><td>{esc(r.source_id)}</td></tr>"
                )
            parts.append("</table>")
        parts.append("</details>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"


def render_report(
    store: RecordStore,
    months: Sequence[Month | str],
    output_dir: str | Path,
    formats: Iterable[str] = FORMATS,
    settings: Optional[ReportSettings] = None,
) -> list[Path]:
    """Write the requested artifacts for every month; returns the files written."""
    if not months:
        raise ValueError("at least one month is required")
    parsed = [m if isinstance(m, Month) else Month.parse(m) for m in months]
    requested = set(formats)
    wanted = [f for f in FORMATS if f in requested]
    unknown = requested - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown report format(s): {', '.join(sorted(unknown))}")
    settings = settings or ReportSettings()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for month in parsed:
        report = month_report(store, month, settings)
        for fmt in wanted:
            if fmt == "json":
                text = render_json(report)
            elif fmt == "svg":
                text = render_svg(report)
            else:
                text = render_html(report, store, settings.last_n)
            path = out / f"{month}.{fmt}"
            path.write_text(text, encoding="utf-8", newline="\n")
            manifest.append(path)
    return manifest
