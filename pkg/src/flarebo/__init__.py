"""Per-image Bayesian optimisation of a low-light enhancement pipeline."""

__version__ = "0.1.0"
