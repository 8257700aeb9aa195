"""Evolutionary de-homogenization of lattice designs into manufacturable pixel structures."""

__version__ = "0.1.0"
