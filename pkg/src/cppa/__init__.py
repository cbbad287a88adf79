"""Cutting-plane pricing for wholesale electricity markets."""

__version__ = "0.1.0"
