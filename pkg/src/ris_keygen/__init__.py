"""Simulation and optimization toolkit for RIS-assisted secret key generation."""

__version__ = "0.1.0"
