"""Synthetic bias benchmarks and pseudo bias-balanced learning."""

__version__ = "0.1.0"
