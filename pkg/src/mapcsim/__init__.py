"""Mobility-aware power control for VCSEL-based indoor optical wireless networks."""

__version__ = "0.1.0"
