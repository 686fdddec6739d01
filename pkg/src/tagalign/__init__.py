"""Align a frozen graph encoder to a frozen language model through a query-token translator."""

__version__ = "0.1.0"
