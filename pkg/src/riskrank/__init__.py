"""Explainable financial risk ranking from annual-report text."""

__version__ = "0.1.0"
