"""Retrieval and answer-quality evaluation harness for RAG systems."""

__version__ = "0.1.0"
