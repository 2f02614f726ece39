"""Map-guided object insertion for lidar point clouds.

Objects cut from annotated scans are re-inserted into other scans at the same
range, on a surface that suits their class, with per-pixel occlusion handling.
"""
from .augment import AugmentConfig, augment_scene, extract_object, naive_gt_aug
from .bevmap import BevGrid, build_map
from .boxfit import fit_box, refine_box
from .geometry import convex_hull, min_area_rect, rects_overlap
from .model import InsertableObject, LidarScan, OrientedBox, Pose
from .spherical import depth_order_violations, resolve_occlusion

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "BevGrid", "InsertableObject", "LidarScan", "OrientedBox", "Pose",
    "augment_scene", "build_map", "convex_hull", "depth_order_violations", "extract_object",
    "fit_box", "min_area_rect", "naive_gt_aug", "rects_overlap", "refine_box", "resolve_occlusion",
]
