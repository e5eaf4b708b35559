"""Desk-scale model-based RL with privileged training-time sensing."""

__version__ = "0.1.0"
