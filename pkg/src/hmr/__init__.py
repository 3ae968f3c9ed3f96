"""Hierarchical massage-robot toolkit: acupoint grounding I/O and benchmarking,
plus the RGB-D to joint-trajectory control chain and a kinematic simulator."""

__version__ = "0.1.0"
