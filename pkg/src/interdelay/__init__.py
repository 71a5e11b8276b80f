"""Interdisciplinarity and citation-delay analysis for scholarly corpora."""

__version__ = "0.1.0"
