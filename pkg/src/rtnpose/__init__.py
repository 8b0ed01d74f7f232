"""Rotation-class pose normalization for 3D point clouds.

A classifier over a discretized rotation grid predicts how a cloud is turned
away from its category's canonical view; undoing the predicted rotation
brings differently oriented instances into one shared pose.
"""

from .cloud import PointCloud, chamfer_distance, read_cloud, write_cloud
from .codec import DiscretizationGrid, build_grid, grid_from_k
from .model import RtnConfig, RtnModel, load_checkpoint, normalize_pose, save_checkpoint
from .so3 import EulerZYZ, euler_to_matrix, matrix_to_euler

__all__ = [
    "DiscretizationGrid",
    "EulerZYZ",
    "PointCloud",
    "RtnConfig",
    "RtnModel",
    "build_grid",
    "chamfer_distance",
    "euler_to_matrix",
    "grid_from_k",
    "load_checkpoint",
    "matrix_to_euler",
    "normalize_pose",
    "read_cloud",
    "save_checkpoint",
    "write_cloud",
]
__version__ = "0.1.0"
