"""Simulation toolkit for two-party quantum protocols, their ideal-world simulators and cheating attacks."""

__version__ = "0.1.0"
