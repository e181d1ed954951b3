"""Mobility flows from venue transitions, with explanatory and predictive crime models."""

__version__ = "0.1.0"
