"""Depth-from-height uncertainty propagation and hierarchical loss weighting."""

__version__ = "0.1.0"
