"""Pixel-only document understanding toolkit: rendering, patching, targets and a toy model."""

__version__ = "0.1.0"

from .errors import PixelDocError  # noqa: F401
