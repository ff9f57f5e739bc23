"""Application configuration loaded from a YAML file.

Example ``vulntrend.conf``::

    store: data/vulns.jsonl
    rules: null                 # optional path to a keyword rules file
    fetch:
      timeout_seconds: 10
      max_retries: 2
      user_agent: vulntrend/0.1
      min_delay_between_requests_seconds: 1
      retry_delay_seconds: 2
    dedup:
      window_days: 60
      threshold: 0.8
    report:
      k: 3
      peak_factor: 3.0
      peak_min_count: 5
      peak_window_days: 7
      formats: [json, svg, html]
    sources:
      - id: zeroday
        display_name: 0day market
        base_url: https://example.org/listing
        adapter_kind: market-listing
        poll_interval_seconds: 60
        enabled: true
        pages: [https://example.org/listing?page=1]

Relative paths (store, rules, ``file:`` URLs) are resolved against the
directory holding the config file.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional
from urllib.parse import urlparse

import yaml

from .analytics import ReportSettings
from .dedup import DedupConfig
from .errors import ConfigError
from .report import FORMATS
from .sources import FetchPolicy, SourceDescriptor

DEFAULT_CONFIG_PATH = Path("vulntrend.conf")
DEFAULT_STORE_PATH = "vulntrend-store.jsonl"


@dataclass
class AppConfig:
    store_path: Path
    sources: list[SourceDescriptor] = field(default_factory=list)
    fetch: FetchPolicy = field(default_factory=FetchPolicy)
    dedup: DedupConfig = field(default_factory=DedupConfig)
    rules_path: Optional[Path] = None
    report: ReportSettings = field(default_factory=ReportSettings)
    report_formats: tuple[str, ...] = FORMATS

    def require_sources(self) -> None:
        if not self.sources:
            raise ConfigError("configuration defines no sources")

    def source(self, source_id: str) -> SourceDescriptor:
        for s in self.sources:
            if s.id == source_id:
                return s
        known = ", ".join(s.id for s in self.sources) or "none"
        raise ConfigError(f"unknown source id {source_id!r} (configured: {known})")


def _build(cls, data: Any, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _resolve_url(url: str, base: Path) -> str:
    parsed = urlparse(url)
    if parsed.scheme == "file" and not parsed.netloc and not parsed.path.startswith("/"):
        return (base / parsed.path).resolve().as_uri()
    return url


def apply_override(raw: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override to raw config data in place.

    The value is parsed as YAML, so numbers, booleans and lists work.
    ``sources.<id>.<field>`` addresses a source by id.
    """
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty override key in {assignment!r}")
    parsed = yaml.safe_load(value) if value.strip() else ""
    node: Any = raw
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            matches = [s for s in node if isinstance(s, dict) and s.get("id") == part]
            if not matches:
                raise ConfigError(f"override {key!r}: no source with id {part!r}")
            node = matches[0]
        else:
            node = node.setdefault(part, [] if part == "sources" and i == 0 else {})
    if isinstance(node, list):
        raise ConfigError(f"override {key!r}: address a source field as sources.<id>.<field>")
    node[parts[-1]] = parsed


def parse_config(raw: Optional[dict], base_dir: Path) -> AppConfig:
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = {"store", "rules", "fetch", "dedup", "report", "sources"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    store = raw.get("store") or DEFAULT_STORE_PATH
    store_path = Path(store)
    if not store_path.is_absolute():
        store_path = base_dir / store_path
    rules_path = None
    if raw.get("rules"):
        rules_path = Path(raw["rules"])
        if not rules_path.is_absolute():
            rules_path = base_dir / rules_path

    report_raw = dict(raw.get("report") or {})
    formats = report_raw.pop("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [f.strip() for f in formats.split(",") if f.strip()]
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ConfigError(f"report.formats: unknown {sorted(bad)}")

    sources = []
    for i, s in enumerate(raw.get("sources") or []):
        if not isinstance(s, dict):
            raise ConfigError(f"sources[{i}]: expected a mapping")
        s = dict(s)
        s.setdefault("display_name", s.get("id", ""))
        if "base_url" in s:
            s["base_url"] = _resolve_url(str(s["base_url"]), base_dir)
        s["pages"] = [_resolve_url(str(p), base_dir) for p in s.get("pages") or []]
        sources.append(_build(SourceDescriptor, s, f"sources[{i}]"))
    ids = [s.id for s in sources]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ConfigError(f"duplicate source ids: {sorted(dupes)}")

    return AppConfig(
        store_path=store_path,
        sources=sources,
        fetch=_build(FetchPolicy, raw.get("fetch"), "fetch"),
        dedup=_build(DedupConfig, raw.get("dedup"), "dedup"),
        rules_path=rules_path,
        report=_build(ReportSettings, report_raw, "report"),
        report_formats=tuple(f for f in FORMATS if f in formats),
    )


def load_config(
    path: Optional[Path],
    overrides: Optional[list[str]] = None,
    required: bool = True,
) -> AppConfig:
    """Read the config file (if present), apply overrides, validate."""
    raw: dict = {}
    base_dir = Path.cwd()
    if path is not None and path.exists():
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, UnicodeDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base_dir = path.resolve().parent
    elif required:
        raise ConfigError(f"config file {path} not found")
    for assignment in overrides or []:
        apply_override(raw, assignment)
    return parse_config(raw, base_dir)


def use_fixtures(config: AppConfig, fixtures_dir: Path) -> None:
    """Point every source at local snapshot pages.

    Source ``X`` reads ``<dir>/X/*.html`` (sorted by name) if that directory
    exists, otherwise ``<dir>/X.html``.
    """
    fixtures_dir = fixtures_dir.resolve()
    for source in config.sources:
        folder = fixtures_dir / source.id
        if folder.is_dir():
            pages = sorted(folder.glob("*.html"))
        else:
            pages = [fixtures_dir / f"{source.id}.html"] if (fixtures_dir / f"{source.id}.html").exists() else []
        if not pages:
            raise ConfigError(f"no fixture pages for source {source.id!r} under {fixtures_dir}")
        source.pages = [p.as_uri() for p in pages]
        source.base_url = source.pages[0]
