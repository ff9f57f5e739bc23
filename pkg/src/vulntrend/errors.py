"""Exception hierarchy shared by every vulntrend module."""

from __future__ import annotations


class VulntrendError(Exception):
    """Base class for all errors raised by this package."""


class FetchError(VulntrendError):
    """A listing page could not be obtained."""


class NetworkError(FetchError):
    """Host unreachable or timed out after the whole retry budget."""


class HttpStatusError(FetchError):
    def __init__(self, status: int, url: str = "") -> None:
        super().__init__(f"HTTP {status} for {url}" if url else f"HTTP {status}")
        self.status = status
        self.url = url


class DecodeError(FetchError):
    """Response body is not valid UTF-8."""


class ParseError(VulntrendError):
    """Document has no recognizable entry containers."""


class StorageError(VulntrendError):
    """Record file could not be read or written."""


class InvalidRecord(VulntrendError, ValueError):
    """A record violates one of the VulnRecord invariants."""


class InvalidMonth(VulntrendError, ValueError):
    pass


class RulesError(VulntrendError, ValueError):
    """Malformed keyword rules file or ruleset invariant violation."""


class ConfigError(VulntrendError, ValueError):
    pass
