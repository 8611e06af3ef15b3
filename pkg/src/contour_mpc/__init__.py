"""Contouring-error-bounded model predictive control for switched biaxial gantries."""

__version__ = "0.1.0"
