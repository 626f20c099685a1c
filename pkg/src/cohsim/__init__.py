"""Cycle-accounted directory-based MOESIF cache coherence simulator."""

__version__ = "0.1.0"
