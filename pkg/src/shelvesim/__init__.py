"""Simulation and analysis of weak-dissipation electron-shelving SPAM in 171Yb+."""

__version__ = "0.1.0"
