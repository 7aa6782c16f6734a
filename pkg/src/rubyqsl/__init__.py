"""Variational and exact simulation of blockaded ruby-lattice atom arrays."""

__version__ = "0.1.0"
