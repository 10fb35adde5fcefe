"""Explaining 1D CNN text classifiers and checking the explanations."""

__version__ = "0.1.0"
