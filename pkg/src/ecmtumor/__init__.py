"""Radially symmetric free-boundary tumor growth with an extracellular matrix."""

__version__ = "0.1.0"
