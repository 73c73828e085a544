"""Crossing-preserving vesselness via multi-scale orientation scores."""

__version__ = "0.1.0"
