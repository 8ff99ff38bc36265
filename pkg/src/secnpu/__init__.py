"""Trace-driven model of off-chip memory protection for DNN accelerators."""

__version__ = "0.1.0"
