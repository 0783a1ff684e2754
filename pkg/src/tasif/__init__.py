"""TASIF: time-aware adaptive side-information fusion for sequential recommendation."""

__version__ = "0.1.0"
