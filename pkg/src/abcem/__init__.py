"""Agent-based computational economic market simulation."""

__version__ = "0.1.0"
