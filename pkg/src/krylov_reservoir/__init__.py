"""Krylov complexity of quantum evolution and its use for ranking quantum reservoirs."""

__version__ = "0.1.0"
