"""Hierarchical reinforcement learning from signal temporal logic specifications."""

__version__ = "0.1.0"
