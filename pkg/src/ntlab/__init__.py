"""Electricity-theft detection laboratory: synthetic feeders, theft injection and clustering."""

__version__ = "0.1.0"
