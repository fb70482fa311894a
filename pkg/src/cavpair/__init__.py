"""Simulation and analysis toolkit for a cavity-enhanced narrowband photon-pair source."""

__version__ = "0.1.0"
