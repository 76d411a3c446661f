"""Stochastic travelling waves: instantaneous waves, phase tracking and expansions."""
__version__ = "0.1.0"
