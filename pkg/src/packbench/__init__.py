"""Heightmap-based planning and benchmarking for irregular object packing."""

__version__ = "0.1.0"
