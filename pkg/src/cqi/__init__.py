"""Coherent versus incoherent quantum inference: simulations and bounds."""

__version__ = "0.1.0"
