"""Reduced-order modelling and optimal heating of wood chip drying."""

__version__ = "0.1.0"
