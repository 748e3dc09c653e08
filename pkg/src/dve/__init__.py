"""Decoupled variational embeddings for signed directed networks."""

__version__ = "0.1.0"
