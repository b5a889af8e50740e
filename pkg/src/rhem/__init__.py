"""Relational hyperevent models with time-varying and non-linear effects."""

__version__ = "0.1.0"
