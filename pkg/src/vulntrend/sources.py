"""Source adapters: fetch listing pages and parse them into raw entries.

Every site gets one adapter kind.  Three kinds are supported, all plain
HTML (UTF-8):

``market-listing`` / ``archive-listing``::

    <div class="entry">
      <span class="date">YYYY-MM-DD HH:MM</span>
      <a class="title" href="DETAIL_URL">TITLE</a>
      <span class="author">NAME</span>
    </div>

``microblog``::

    <article>
      <time datetime="YYYY-MM-DDTHH:MM:SSZ"></time>
      <span class="handle">NAME</span>
      <p class="text">TITLE</p>
    </article>

A microblog article may also carry ``<a class="link" href="...">`` for its
detail URL.  :func:`render_listing` writes pages in exactly this layout and is
what the test corpus is generated with.
"""

from __future__ import annotations

import html
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence
from urllib.parse import urlparse
from urllib.request import url2pathname

import requests
from bs4 import BeautifulSoup

from .errors import ConfigError, DecodeError, HttpStatusError, NetworkError, ParseError
from .timeutil import UTC, as_utc, format_seconds

log = logging.getLogger(__name__)

ADAPTER_KINDS = ("market-listing", "archive-listing", "microblog")
MAX_REDIRECTS = 5


@dataclass
class SourceDescriptor:
    id: str
    display_name: str
    base_url: str
    adapter_kind: str
    poll_interval_seconds: int = 60
    enabled: bool = True
    pages: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.id:
            raise ConfigError("source id must be non-empty")
        if self.adapter_kind not in ADAPTER_KINDS:
            raise ConfigError(f"source {self.id}: unknown adapter kind {self.adapter_kind!r}")
        if int(self.poll_interval_seconds) < 1:
            raise ConfigError(f"source {self.id}: poll_interval_seconds must be >= 1")
        for url in self.page_urls:
            check_scheme(url)

    @property
    def page_urls(self) -> list[str]:
        return list(self.pages) if self.pages else [self.base_url]


@dataclass(frozen=True)
class RawEntry:
    source_id: str
    title: str
    discoverer: str
    observed_at: datetime  # UTC, minute precision
    detail_url: str = ""


@dataclass(frozen=True)
class FetchPolicy:
    timeout_seconds: float = 10.0
    max_retries: int = 2
    user_agent: str = "vulntrend/0.1"
    min_delay_between_requests_seconds: float = 1.0
    retry_delay_seconds: float = 2.0

    def __post_init__(self) -> None:
        if self.timeout_seconds <= 0:
            raise ConfigError("timeout_seconds must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.min_delay_between_requests_seconds < 0 or self.retry_delay_seconds < 0:
            raise ConfigError("delays must be >= 0")


@dataclass
class ParsedListing:
    entries: list[RawEntry]
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def check_scheme(url: str) -> str:
    scheme = urlparse(url).scheme.lower()
    if scheme not in ("http", "https", "file"):
        raise ConfigError(f"unsupported URL scheme in {url!r}")
    return scheme


def _file_path(url: str) -> Path:
    parsed = urlparse(url)
    path = url2pathname(parsed.path)
    if parsed.netloc and parsed.netloc != "localhost":
        path = f"//{parsed.netloc}{path}"
    return Path(path)


def fetch_page(
    url: str,
    policy: FetchPolicy = FetchPolicy(),
    *,
    session: Optional[requests.Session] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Return the body of ``url`` as text.

    ``file:`` URLs are read straight from disk.  HTTP(S) connection failures
    and timeouts are retried up to ``policy.max_retries`` times; a non-2xx
    status is raised immediately as :class:`HttpStatusError`.
    """
    if check_scheme(url) == "file":
        path = _file_path(url)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise NetworkError(f"cannot read {path}: {exc}") from exc
        return _decode(data, url)

    sess = session or requests.Session()
    sess.max_redirects = MAX_REDIRECTS
    headers = {"User-Agent": policy.user_agent}
    last_exc: Exception | None = None
    try:
        for attempt in range(policy.max_retries + 1):
            if attempt:
                sleep(policy.retry_delay_seconds * attempt)
            try:
                resp = sess.get(url, headers=headers, timeout=policy.timeout_seconds)
            except requests.TooManyRedirects as exc:
                status = exc.response.status_code if exc.response is not None else 399
                raise HttpStatusError(status, url) from exc
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                log.debug("attempt %d for %s failed: %s", attempt + 1, url, exc)
                continue
            if not 200 <= resp.status_code < 300:
                raise HttpStatusError(resp.status_code, url)
            return _decode(resp.content, url)
    finally:
        if session is None:
            sess.close()
    raise NetworkError(f"{url} unreachable after {policy.max_retries + 1} attempts: {last_exc}")


def _decode(data: bytes, url: str) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"{url}: body is not valid UTF-8 ({exc})") from exc


def _clean(text: str) -> str:
    return " ".join(text.split())


def _parse_date(text: str) -> Optional[datetime]:
    try:
        return datetime.strptime(text.strip(), "%Y-%m-%d %H:%M").replace(tzinfo=UTC)
    except ValueError:
        return None


def _parse_iso(text: str) -> Optional[datetime]:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        return None
    return as_utc(ts).replace(second=0, microsecond=0)


def _parse_entry_divs(soup: BeautifulSoup, source_id: str) -> Optional[ParsedListing]:
    containers = soup.find_all("div", class_="entry")
    if not containers:
        return None
    out = ParsedListing([])
    for div in containers:
        date_tag = div.find("span", class_="date")
        title_tag = div.find("a", class_="title")
        author_tag = div.find("span", class_="author")
        observed = _parse_date(date_tag.get_text()) if date_tag else None
        title = _clean(title_tag.get_text()) if title_tag else ""
        if observed is None or not title:
            out.skipped += 1
            continue
        out.entries.append(
            RawEntry(
                source_id=source_id,
                title=title,
                discoverer=_clean(author_tag.get_text()) if author_tag else "",
                observed_at=observed,
                detail_url=(title_tag.get("href") or "").strip(),
            )
        )
    return out


def _parse_articles(soup: BeautifulSoup, source_id: str) -> Optional[ParsedListing]:
    containers = soup.find_all("article")
    if not containers:
        return None
    out = ParsedListing([])
    for art in containers:
        time_tag = art.find("time")
        text_tag = art.find("p", class_="text")
        handle_tag = art.find("span", class_="handle")
        link_tag = art.find("a", class_="link")
        observed = _parse_iso(time_tag.get("datetime") or "") if time_tag else None
        title = _clean(text_tag.get_text()) if text_tag else ""
        if observed is None or not title:
            out.skipped += 1
            continue
        out.entries.append(
            RawEntry(
                source_id=source_id,
                title=title,
                discoverer=_clean(handle_tag.get_text()) if handle_tag else "",
                observed_at=observed,
                detail_url=(link_tag.get("href") or "").strip() if link_tag else "",
            )
        )
    return out


_PARSERS = {
    "market-listing": _parse_entry_divs,
    "archive-listing": _parse_entry_divs,
    "microblog": _parse_articles,
}


def parse_listing(kind: str, document: str, source_id: str) -> ParsedListing:
    """Extract entries in page order; malformed ones are counted in ``skipped``."""
    try:
        parser = _PARSERS[kind]
    except KeyError:
        raise ParseError(f"unknown adapter kind {kind!r}") from None
    result = parser(BeautifulSoup(document, "html.parser"), source_id)
    if result is None:
        raise ParseError(f"{source_id}: no {kind} entry containers found in document")
    return result


def entries_after(entries: Iterable[RawEntry], watermark: Optional[datetime]) -> list[RawEntry]:
    if watermark is None:
        return list(entries)
    watermark = as_utc(watermark)
    return [e for e in entries if e.observed_at > watermark]


def is_plausible(entry: RawEntry, fetched_at: datetime, slack: timedelta = timedelta(hours=24)) -> bool:
    """False for entries dated further in the future than the allowed slack."""
    return entry.observed_at <= as_utc(fetched_at) + slack


def render_listing(kind: str, entries: Sequence[RawEntry], title: str = "listing") -> str:
    """Write ``entries`` as a page that :func:`parse_listing` reads back."""
    esc = html.escape
    rows = []
    for e in entries:
        if kind == "microblog":
            link = f'<a class="link" href="{esc(e.detail_url)}">link</a>' if e.detail_url else ""
            rows.append(
                f'<article><time datetime="{format_seconds(e.observed_at)}"></time>'
                f'<span class="handle">{esc(e.discoverer)}</span>'
                f'<p class="text">{esc(e.title)}</p>{link}</article>'
            )
        elif kind in ("market-listing", "archive-listing"):
            rows.append(
                f'<div class="entry"><span class="date">{e.observed_at:%Y-%m-%d %H:%M}</span>'
                f'<a class="title" href="{esc(e.detail_url)}">{esc(e.title)}</a>'
                f'<span class="author">{esc(e.discoverer)}</span></div>'
            )
        else:
            raise ValueError(f"unknown adapter kind {kind!r}")
    body = "\n".join(rows)
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{esc(title)}</title></head>\n<body>\n{body}\n</body></html>\n"
    )
