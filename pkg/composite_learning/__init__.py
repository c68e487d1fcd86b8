"""Composite robot skill learning: definition, demonstration and evaluation."""

__version__ = "0.1.0"
