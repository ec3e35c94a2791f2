"""Optimal-transport local particle filters and ensemble baselines on periodic 1-D SPDEs."""

__version__ = "0.1.0"
