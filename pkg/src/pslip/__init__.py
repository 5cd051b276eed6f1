"""Singular p-Laplacian system with symmetric gradient under Navier slip conditions."""

__version__ = "0.1.0"
