"""Near-duplicate gate: word overlap against recent records of the same class."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Iterable, Optional

from .errors import ConfigError
from .taxonomy import VulnClass, tokenize
from .timeutil import as_utc

# (class, from, to) -> stored records of that class observed within [from, to]
HistoryProvider = Callable[[VulnClass, datetime, datetime], Iterable]


@dataclass(frozen=True)
class DedupConfig:
    window_days: int = 60
    threshold: float = 0.8

    def __post_init__(self) -> None:
        if self.window_days < 1:
            raise ConfigError("window_days must be >= 1")
        if not 0 < self.threshold <= 1:
            raise ConfigError("threshold must be in (0, 1]")


class VerdictKind(enum.Enum):
    UNIQUE = "unique"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class DedupVerdict:
    kind: VerdictKind
    matched_record_id: Optional[int] = None
    similarity: Optional[float] = None

    @property
    def is_duplicate(self) -> bool:
        return self.kind is VerdictKind.DUPLICATE


UNIQUE = DedupVerdict(VerdictKind.UNIQUE)


def title_tokens(title: str) -> Counter:
    # a bare "-" separator ("Product - Bug") is punctuation, not a shared word
    return Counter(t.lower() for t in tokenize(title) if t.strip("-"))


def similarity(a: Counter | Iterable[str], b: Counter | Iterable[str]) -> float:
    """Overlap coefficient |a ∩ b| / min(|a|, |b|) of two token multisets.

    Either side empty gives 0.0.
    """
    a = a if isinstance(a, Counter) else Counter(a)
    b = b if isinstance(b, Counter) else Counter(b)
    size_a, size_b = sum(a.values()), sum(b.values())
    if not size_a or not size_b:
        return 0.0
    common = sum((a & b).values())
    return common / min(size_a, size_b)


def check_duplicate(
    title: str,
    vuln_class: VulnClass,
    history: HistoryProvider,
    config: DedupConfig,
    now: datetime,
) -> DedupVerdict:
    """Compare ``title`` against same-class records from the trailing window.

    Returns the best-scoring match if it reaches ``config.threshold``; ties
    go to the lowest record id.
    """
    now = as_utc(now)
    candidate = title_tokens(title)
    best: Optional[tuple[float, int]] = None
    for rec in history(vuln_class, now - timedelta(days=config.window_days), now):
        if rec.vuln_class is not vuln_class:
            continue
        score = similarity(candidate, title_tokens(rec.title))
        if score >= config.threshold and (best is None or (score, -rec.id) > (best[0], -best[1])):
            best = (score, rec.id)
    if best is None:
        return UNIQUE
    return DedupVerdict(VerdictKind.DUPLICATE, matched_record_id=best[1], similarity=best[0])
