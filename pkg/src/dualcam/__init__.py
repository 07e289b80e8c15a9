"""Dual-camera map fusion: scale, align, link and jointly optimize fragmentary
documentation-camera maps against a localization-camera trajectory."""

__version__ = "0.1.0"
