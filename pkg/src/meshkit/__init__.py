"""meshkit: hierarchy-aware zero-shot classification toolkit for MeSH-style thesauri."""

__version__ = "0.1.0"
