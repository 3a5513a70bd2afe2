"""Numerical lab for a repeated inspection game with two-sided reputation."""

__version__ = "0.1.0"
