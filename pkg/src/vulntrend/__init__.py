"""Crawl vulnerability listings, classify them, and analyse monthly trends."""

from .taxonomy import VulnClass, classify, default_ruleset, tokenize

__version__ = "0.1.0"

__all__ = ["VulnClass", "classify", "default_ruleset", "tokenize", "__version__"]
