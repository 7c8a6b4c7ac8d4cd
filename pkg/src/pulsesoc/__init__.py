"""Pulse-injection state-of-charge estimation on a simulated lithium-ion cell."""

__version__ = "0.1.0"
