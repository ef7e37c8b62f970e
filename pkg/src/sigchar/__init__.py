"""Characteristic functions of signatures of Itô diffusions."""

__version__ = "0.1.0"
