"""Exact binary-free reformulation of logic constraints for nonlinear programs."""

__version__ = "0.1.0"
