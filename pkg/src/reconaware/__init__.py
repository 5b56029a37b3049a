"""Reconstruction-aware manipulation planning with Gaussian process implicit surfaces.

Perception (simulated depth, table segmentation, implicit-surface fit),
grasp planning, cross-entropy trajectory search that maximizes how much
unexplored surface the camera sees, and reconstruction metrics.
"""

__version__ = "0.1.0"
