"""Adversarial nets on a from-scratch numpy stack, with exact checks of the underlying theory."""

__version__ = "0.1.0"
