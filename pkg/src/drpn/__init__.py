"""Denoising news recommendation with positive and negative implicit feedback."""
__version__ = "0.1.0"
