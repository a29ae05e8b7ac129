"""Deterministic geometric-overlay QA dataset generation and verification."""

__version__ = "0.1.0"
