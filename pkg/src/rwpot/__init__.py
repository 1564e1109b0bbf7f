"""Random walk in an i.i.d. random potential on Z^d: exact finite-window costs, renormalized approximants and Monte Carlo estimators."""

__version__ = "0.1.0"
