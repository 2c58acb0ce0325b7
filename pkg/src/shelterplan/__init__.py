"""Capacity-expansion planning toolkit for youth shelter networks."""

__version__ = "0.1.0"
