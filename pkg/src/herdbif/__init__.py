"""Delayed predator-prey model with prey group defence and a generalist predator."""

__version__ = "0.1.0"
