"""Bucketed sliding-midpoint kd-tree indexing for LiDAR point clouds."""

from .cloud import Aabb, PointCloud
from .kdtree import BuildConfig, KdTree, build, stats, validate
from .knn import Neighbor, brute_force_knn, knn
from .parallel import ParallelPlan, build_topology, par_build, plan_for_workers, structural_hash

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "PointCloud",
    "BuildConfig",
    "KdTree",
    "build",
    "stats",
    "validate",
    "Neighbor",
    "knn",
    "brute_force_knn",
    "ParallelPlan",
    "build_topology",
    "par_build",
    "plan_for_workers",
    "structural_hash",
]
