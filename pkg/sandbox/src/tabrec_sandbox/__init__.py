"""Sandboxed script runner for table-analysis pipelines."""

__version__ = "0.1.0"
