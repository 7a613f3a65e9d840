"""Multi-scale neighborhood-aware transformer for graph fraud detection."""

__version__ = "0.1.0"
