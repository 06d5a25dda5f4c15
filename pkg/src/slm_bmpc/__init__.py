"""Batch model predictive control of a lumped thermal model of laser powder-bed layers."""

__version__ = "0.1.0"
