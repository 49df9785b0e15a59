"""Evaluation, screening and post-processing toolkit for rhythm-game charts."""

__version__ = "0.1.0"
