"""Collisions of random walks in a random environment with simple random walks."""

__version__ = "0.1.0"
