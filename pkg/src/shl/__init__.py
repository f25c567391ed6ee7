"""Desk-scale laboratory for quantitative stochastic homogenization on a periodic lattice."""

from .lattice import PeriodicGrid, ScalarField, EdgeField, PlaquetteField

__all__ = ["PeriodicGrid", "ScalarField", "EdgeField", "PlaquetteField"]
__version__ = "0.1.0"
