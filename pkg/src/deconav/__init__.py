"""Desk-scale navigation framework with adaptive memory refinement and trust-region corrections."""

__version__ = "0.1.0"
