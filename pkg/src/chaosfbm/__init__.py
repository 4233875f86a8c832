"""Particle systems driven by fractional Brownian motion with mollified singular interactions."""

__version__ = "0.1.0"
