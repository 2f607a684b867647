"""Namespace-aware adaptive metadata routing with cooperative caching."""

__version__ = "0.1.0"
