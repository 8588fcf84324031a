"""Pinhole cameras (OpenCV convention: x right, y down, z forward)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Camera:
    rotation: np.ndarray      # world -> camera
    translation: np.ndarray   # world -> camera
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"camera rotation not orthonormal (error {err:.2e})")

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(np.array(d["rotation"]), np.array(d["translation"]), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


def look_at(eye, target, up=(0.0, 0.0, 1.0), width=256, height=256, fov_deg=45.0) -> Camera:
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    # re-orthonormalize to keep the 1e-9 invariant under accumulated rounding
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
    return Camera(rot, -rot @ eye, f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def orbit_cameras(center, extent, n_views=24, elevations_deg=(-10.0, 20.0), radius_factor=3.0,
                  width=256, height=256, fov_deg=45.0) -> list:
    """Views spread over azimuth at the given elevations, looking at ``center``.

    Azimuths interleave between elevation rings so any prefix of the list
    covers the object from several sides.
    """
    center = np.asarray(center, dtype=float)
    radius = radius_factor * float(extent)
    n_el = len(elevations_deg)
    cams = []
    for i in range(n_views):
        el = math.radians(elevations_deg[i % n_el])
        az = 2.0 * math.pi * i / n_views + (0.5 * math.pi)
        eye = center + radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        cams.append(look_at(eye, center, width=width, height=height, fov_deg=fov_deg))
    return cams
