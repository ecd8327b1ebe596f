"""Numerical laboratory for maximal and singular operators, rough flows and transport."""

__version__ = "0.1.0"
