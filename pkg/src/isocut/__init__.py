"""Unfitted isoparametric finite elements with Nitsche interface coupling in 2D."""

__version__ = "0.1.0"
