"""Explainable sequential recommendation with LLM preference alignment."""

__version__ = "0.1.0"
