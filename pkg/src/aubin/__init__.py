"""Verification of the Aubin property for parametric variational systems."""

__version__ = "0.1.0"
