"""Heatmap-based radar target localization with clutter-subspace diagnostics."""

__version__ = "0.1.0"
