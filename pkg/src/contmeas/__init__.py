"""Simulation toolkit for continuously measured open quantum systems."""

__version__ = "0.1.0"
