"""Adapter from raw geo-tagged text datasets to the engine's corpus formats."""

__version__ = "0.1.0"
