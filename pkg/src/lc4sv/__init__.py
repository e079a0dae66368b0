"""Learned noisy/enhanced interpolation front-end for speaker verification."""

__version__ = "0.1.0"
