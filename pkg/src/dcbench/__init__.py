"""Trace-driven data-center network benchmarking toolkit."""

__version__ = "0.1.0"
