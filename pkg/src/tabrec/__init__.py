"""Zero-turn tabular analysis recommendation pipeline and evaluation harness."""

__version__ = "0.1.0"
