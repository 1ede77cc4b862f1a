"""Numerical toolkit for multiplayer quantum XOR games built from Gaussian tensors."""

__version__ = "0.1.0"
