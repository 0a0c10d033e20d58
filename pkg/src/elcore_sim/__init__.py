"""Deterministic simulator for hierarchical resource discovery on many-core systems."""

__version__ = "0.1.0"
