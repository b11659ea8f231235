"""Numerical laboratory for amplitude statistics of four-wave weak turbulence."""

__version__ = "0.1.0"
