"""Excited random walks in identical cookie stacks and their branching-like process."""

__version__ = "0.1.0"
