"""Causal attack attribution for sliced-network telemetry."""

__version__ = "0.1.0"
