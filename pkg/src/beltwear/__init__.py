"""Acoustic classification of abrasive belt wear on wide belt sanders."""

__version__ = "0.1.0"
