"""Numerical laboratory for semilinear HJB equations driven by Ornstein-Uhlenbeck noise."""

__version__ = "0.1.0"
