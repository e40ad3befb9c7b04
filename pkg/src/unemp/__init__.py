"""Unemployment dynamics: ODE models, vacancy fitting and optimal control."""

__version__ = "0.1.0"
