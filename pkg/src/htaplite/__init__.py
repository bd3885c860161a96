"""Desk-scale in-memory HTAP engine with elastic resource scheduling."""

__version__ = "0.1.0"
