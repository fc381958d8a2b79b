"""Data-driven piecewise-affine stochastic barrier certificates."""

from .geometry import Box, HalfspaceSystem, boxes_intersect, convex_hull_vertices, intersect_boxes, to_halfspaces
from .partition import EXTERIOR, grid_partition, classify_indices
from .scenario import NoiseDataset, beta_bound, buffer_delta, barrier_dimension, prune_to_hull, required_samples
from .synthesis import BarrierPWA, Certificate, certify
from .validation import check_onestep_empirical, simulate_safety

__version__ = "0.1.0"
