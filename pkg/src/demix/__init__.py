"""Convex demixing: random-rotation demixing instances, statistical dimensions and phase transitions."""

from .errors import DemixError

__version__ = "0.1.0"

__all__ = ["DemixError", "__version__"]
