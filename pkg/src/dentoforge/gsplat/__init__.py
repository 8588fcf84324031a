"""3D Gaussians, cameras, and the CPU tile rasterizer."""
from .camera import Camera, look_at, orbit_cameras
from .gaussians import (
    FIELDS,
    SH_C0,
    Gaussian3D,
    GaussianGrads,
    SceneGaussians,
    ToothGaussians,
    covariance,
    init_from_layout,
    layout_from_gaussians,
    normalize_quats,
    quat_to_rotmat,
)
from .projection import project, project_gaussians
from .raster import RenderResult, rasterize, rasterize_backward, render_backward_flat, render_flat

__all__ = [
    "Camera", "look_at", "orbit_cameras", "FIELDS", "SH_C0", "Gaussian3D", "GaussianGrads",
    "SceneGaussians", "ToothGaussians", "covariance", "init_from_layout", "layout_from_gaussians",
    "normalize_quats", "quat_to_rotmat", "project", "project_gaussians", "RenderResult", "rasterize",
    "rasterize_backward", "render_backward_flat", "render_flat",
]
