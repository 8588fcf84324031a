"""Filled-box silhouettes of tooth layouts (the scene-level layout render)."""
import numpy as np

from .camera import Camera


def pixel_rays(cam: Camera):
    """World-space ray origin and unit directions for every pixel center."""
    ys, xs = np.mgrid[0:cam.height, 0:cam.width].astype(float)
    d_cam = np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy, np.ones_like(xs)], axis=-1)
    d = d_cam @ cam.rotation
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return cam.position, d


def render_layouts(layouts, cam: Camera) -> np.ndarray:
    """(H, W) mask, 1 where a pixel ray hits any layout box."""
    origin, dirs = pixel_rays(cam)
    mask = np.zeros((cam.height, cam.width))
    for lay in layouts:
        if lay is None:
            continue
        rot = lay.rotation()
        o = (origin - lay.center) @ rot
        d = dirs @ rot
        e = lay.half_extents
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-e - o) / d
            t2 = (e - o) / d
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tmax >= np.maximum(tmin, 0.0))
        mask[hit] = 1.0
    return mask
