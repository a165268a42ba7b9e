"""Benchmark generation and probing toolkit for exact multi-digit multiplication."""

__version__ = "0.1.0"
