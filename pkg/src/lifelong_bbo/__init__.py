"""Lifelong learning of symbolic update rules for black-box optimization."""

__version__ = "0.1.0"
