"""Closed-loop task planning for a simulated robot arm."""

__version__ = "0.1.0"
