"""Vulnerability classes and the keyword rule engine that assigns them.

Classification is first-match over an ordered ruleset: rules are tried in
ascending priority and the first one whose pattern occurs in the text decides
the class.  Text that matches no rule is filed under ``VulnClass.OTHER``.

The built-in rules live in ``default_rules.tsv`` next to this module, in the
same tab-separated format accepted by :func:`load_rules`.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import RulesError

__all__ = [
    "VulnClass",
    "CaseMode",
    "Boundary",
    "KeywordRule",
    "ClassificationResult",
    "tokenize",
    "classify",
    "default_ruleset",
    "load_rules",
    "parse_rules",
    "validate_ruleset",
]


class VulnClass(enum.Enum):
    """Closed set of vulnerability classes; values are the canonical names."""

    INJECTION = "injection"
    BROKEN_AUTHENTICATION = "broken-authentication"
    CROSS_SITE_REQUEST_FORGERY = "csrf"
    SERVER_SIDE_REQUEST_FORGERY = "ssrf"
    CROSS_SITE_SCRIPTING = "xss"
    REMOTE_CODE_EXECUTION = "remote-code-execution"
    REMOTE_COMMAND_EXECUTION = "remote-command-execution"
    DENIAL_OF_SERVICE = "denial-of-service"
    BUFFER_OVERFLOW = "buffer-overflow"
    PRIVILEGE_ESCALATION = "privilege-escalation"
    ARBITRARY_FILE_MANIPULATION = "arbitrary-file-manipulation"
    DIRECTORY_TRAVERSAL = "directory-traversal"
    OTHER = "other"

    @property
    def canonical(self) -> str:
        return self.value

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_name(cls, name: str) -> "VulnClass":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown class {name!r}; valid names: {valid}") from None


_LABELS = {
    VulnClass.INJECTION: "Injection",
    VulnClass.BROKEN_AUTHENTICATION: "Broken Authentication",
    VulnClass.CROSS_SITE_REQUEST_FORGERY: "Cross-Site Request Forgery",
    VulnClass.SERVER_SIDE_REQUEST_FORGERY: "Server-Side Request Forgery",
    VulnClass.CROSS_SITE_SCRIPTING: "Cross-Site Scripting",
    VulnClass.REMOTE_CODE_EXECUTION: "Remote Code Execution",
    VulnClass.REMOTE_COMMAND_EXECUTION: "Remote Command Execution",
    VulnClass.DENIAL_OF_SERVICE: "Denial of Service",
    VulnClass.BUFFER_OVERFLOW: "Buffer Overflow",
    VulnClass.PRIVILEGE_ESCALATION: "Privilege Escalation",
    VulnClass.ARBITRARY_FILE_MANIPULATION: "Arbitrary File Manipulation",
    VulnClass.DIRECTORY_TRAVERSAL: "Directory Traversal",
    VulnClass.OTHER: "Other",
}


class CaseMode(str, enum.Enum):
    EXACT = "exact"
    INSENSITIVE = "insensitive"


class Boundary(str, enum.Enum):
    WHOLE_TOKEN = "whole-token"
    SUBSTRING = "substring"


# letters, digits and hyphens form tokens; everything else separates them
_TOKEN_RE = re.compile(r"(?:[^\W_]|-)+")


def tokenize(text: str) -> list[str]:
    """Split on every character that is not a letter, digit or hyphen.

    >>> tokenize("SQL Injection in FooCMS 2.1!")
    ['SQL', 'Injection', 'in', 'FooCMS', '2', '1']
    """
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class KeywordRule:
    pattern: str
    case_mode: CaseMode
    boundary: Boundary
    target: VulnClass
    priority: int

    def __post_init__(self) -> None:
        if not self.pattern or not self.pattern.strip():
            raise RulesError("rule pattern must be non-empty")
        if self.target is VulnClass.OTHER:
            raise RulesError(f"rule {self.pattern!r} targets 'other', which is only a fallback")
        if self.boundary is Boundary.WHOLE_TOKEN and not tokenize(self.pattern):
            raise RulesError(f"whole-token rule {self.pattern!r} contains no tokens")

    def matches(self, text: str, tokens: Optional[Sequence[str]] = None) -> bool:
        """True if the pattern occurs in ``text`` under this rule's modes.

        ``tokens`` may carry a precomputed ``tokenize(text)``.
        """
        insensitive = self.case_mode is CaseMode.INSENSITIVE
        if self.boundary is Boundary.SUBSTRING:
            if insensitive:
                return self.pattern.casefold() in text.casefold()
            return self.pattern in text

        needle = tokenize(self.pattern)
        hay = tokenize(text) if tokens is None else tokens
        if insensitive:
            needle = [t.casefold() for t in needle]
            hay = [t.casefold() for t in hay]
        n = len(needle)
        return any(list(hay[i : i + n]) == needle for i in range(len(hay) - n + 1))


@dataclass(frozen=True)
class ClassificationResult:
    vuln_class: VulnClass
    matched_rule: Optional[KeywordRule] = None

    def __post_init__(self) -> None:
        if (self.matched_rule is None) != (self.vuln_class is VulnClass.OTHER):
            raise ValueError("matched_rule must be present exactly when the class is not 'other'")


def classify(text: str, rules: Sequence[KeywordRule]) -> ClassificationResult:
    """Return the class of the first rule (by priority) matching ``text``."""
    if not text:
        return ClassificationResult(VulnClass.OTHER)
    tokens = tokenize(text)
    for rule in rules:
        if rule.matches(text, tokens):
            return ClassificationResult(rule.target, rule)
    return ClassificationResult(VulnClass.OTHER)


def validate_ruleset(rules: Iterable[KeywordRule]) -> list[KeywordRule]:
    """Sort by priority and enforce unique priorities and full class coverage."""
    ordered = sorted(rules, key=lambda r: r.priority)
    seen: dict[int, KeywordRule] = {}
    for rule in ordered:
        if rule.priority in seen:
            raise RulesError(
                f"priority {rule.priority} used by both {seen[rule.priority].pattern!r} and {rule.pattern!r}"
            )
        seen[rule.priority] = rule
    missing = {c for c in VulnClass if c is not VulnClass.OTHER} - {r.target for r in ordered}
    if missing:
        names = ", ".join(sorted(c.value for c in missing))
        raise RulesError(f"ruleset has no rule for: {names}")
    return ordered


def parse_rules(text: str, source: str = "<rules>") -> list[KeywordRule]:
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 5:
            raise RulesError(f"{source}:{lineno}: expected 5 tab-separated fields, got {len(fields)}")
        prio, pattern, case_mode, boundary, cls = fields
        try:
            rules.append(
                KeywordRule(
                    pattern=pattern,
                    case_mode=CaseMode(case_mode.strip()),
                    boundary=Boundary(boundary.strip()),
                    target=VulnClass.from_name(cls),
                    priority=int(prio),
                )
            )
        except (ValueError, RulesError) as exc:
            raise RulesError(f"{source}:{lineno}: {exc}") from None
    return validate_ruleset(rules)


def load_rules(path: str | Path) -> list[KeywordRule]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise RulesError(f"cannot read rules file {path}: {exc}") from exc
    return parse_rules(text, str(path))


_DEFAULT: Optional[tuple[KeywordRule, ...]] = None


def default_ruleset() -> list[KeywordRule]:
    """The built-in rulebook, ordered by priority."""
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files(__package__).joinpath("default_rules.tsv").read_text(encoding="utf-8")
        _DEFAULT = tuple(parse_rules(text, "default_rules.tsv"))
    return list(_DEFAULT)
