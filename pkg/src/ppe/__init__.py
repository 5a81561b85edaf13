"""Plane extraction from organized range scans."""

__version__ = "0.1.0"
