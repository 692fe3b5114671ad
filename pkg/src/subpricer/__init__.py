"""Churn-aware, guardrailed subscription pricing engine."""

__version__ = "0.1.0"
