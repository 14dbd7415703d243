"""Finite-difference time integration of generalized Kirchhoff-Love plates."""

__version__ = "0.1.0"
