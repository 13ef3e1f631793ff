"""Unified visual/language codebook experiments at desk scale."""

__version__ = "0.1.0"
