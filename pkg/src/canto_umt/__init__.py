"""Unsupervised Mandarin-Cantonese machine translation workbench."""

__version__ = "0.1.0"
