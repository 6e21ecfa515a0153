"""Numerical global bifurcation from infinity for asymptotically linear Schrödinger equations."""

__version__ = "0.1.0"
