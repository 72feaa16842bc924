"""Leakage-free multi-label benchmarking harness for CWRU bearing fault diagnosis."""

__version__ = "0.1.0"
