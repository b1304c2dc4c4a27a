"""Compute-governance toolkit: compute accounting, licensed hardware, governors,
geolocation, risk-tier policy, and a seeded scenario simulator."""

__version__ = "0.1.0"
