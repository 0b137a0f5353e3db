"""Desk-scale simulator, native-gate compiler and benchmarking harness for an
11-qubit trapped-ion quantum computer."""

__version__ = "0.1.0"
