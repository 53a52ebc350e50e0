"""Simulation and verification of super-Brownian motion with interactive branching."""

__version__ = "0.1.0"
