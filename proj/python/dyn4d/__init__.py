"""Two-view dynamic 3D Gaussian splatting (C++ core, Python bindings)."""

from ._dyn4d import (
    ContractError,
    Intrinsics,
    IoError,
    Scene,
    depth_abs_rel,
    depth_delta,
    fit,
    flow_delta3d,
    flow_to_color,
    gradcheck,
    init_scene,
    load_scene,
    median_scale_align,
    point_epe,
    scene_from_bytes,
    synthetic_scene,
)

__all__ = [
    "ContractError",
    "Intrinsics",
    "IoError",
    "Scene",
    "depth_abs_rel",
    "depth_delta",
    "fit",
    "flow_delta3d",
    "flow_to_color",
    "gradcheck",
    "init_scene",
    "load_scene",
    "median_scale_align",
    "point_epe",
    "scene_from_bytes",
    "synthetic_scene",
]
