"""Valley-method toolkit for the asymmetric double-well oscillator."""

__version__ = "0.1.0"
