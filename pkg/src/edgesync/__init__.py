"""Deterministic edge-cloud continuous-learning simulator and control plane."""

__version__ = "0.1.0"
