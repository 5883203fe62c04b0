"""Hierarchical multi-sensor search-and-sample mission simulator."""

__version__ = "0.1.0"
