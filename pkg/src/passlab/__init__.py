"""Simulation and verification tools for memory-bounded multi-pass learning."""

__version__ = "0.1.0"
