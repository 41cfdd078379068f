"""Satellite-to-ground single-photon link: budget, pass simulation and timing analysis."""

__version__ = "0.1.0"
