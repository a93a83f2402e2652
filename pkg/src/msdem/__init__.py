"""Particle-continuum multiscale sea-ice floe model."""

__version__ = "0.1.0"
