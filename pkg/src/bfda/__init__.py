"""Pseudo-spectral simulation of the damped (Brinkman-Forchheimer) Navier-Stokes
equations with continuous data assimilation by nudging."""

__version__ = "0.1.0"
