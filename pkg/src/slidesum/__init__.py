"""Slide transition detection and interactive summarizing for lecture videos."""

__version__ = "0.1.0"

from .categories import Category

__all__ = ["Category", "__version__"]
