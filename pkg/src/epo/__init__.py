"""Strategist-policy reinforcement learning with process rewards and self-play."""

__version__ = "0.1.0"
