"""Canonicalize, filter, deduplicate, mix and score robot-trajectory corpora."""

__version__ = "0.1.0"
