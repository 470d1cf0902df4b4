"""Constrained multi-agent patrolling with cycling multipliers and one-bit gossip."""

__version__ = "0.1.0"
