"""Monte Carlo verification of Poisson process approximation for stabilizing functionals."""

__version__ = "0.1.0"
