"""Solver and verification workbench for parabolic Isaacs equations."""

__version__ = "0.1.0"
