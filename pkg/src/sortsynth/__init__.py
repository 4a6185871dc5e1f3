"""Deductive synthesis of sorting algorithms over lists and multisets."""

__version__ = "0.1.0"
