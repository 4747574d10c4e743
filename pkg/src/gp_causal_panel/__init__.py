"""Gaussian process counterfactuals and treatment effects for panel data."""

__version__ = "0.1.0"
