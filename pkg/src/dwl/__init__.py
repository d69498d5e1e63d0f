"""Denoising world model learning for a planar biped."""

__version__ = "0.1.0"
