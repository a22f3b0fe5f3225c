"""Fronthaul-aware software-defined RAN: simulator, controllers, schedulers."""

__version__ = "0.1.0"
