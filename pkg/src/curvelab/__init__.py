"""Curvature-dimension laboratory for finite reversible Markov triples."""
__version__ = "0.1.0"
