"""Encrypted random-forest prediction across multiple model providers."""

__version__ = "0.1.0"
