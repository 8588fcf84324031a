"""Brute-force compositor: every pixel visits every Gaussian, exact sort.

No tiling, no binning, no shared kernel code. Only the projection step is
shared with the tile rasterizer. Pixels are processed together, Gaussians
one at a time in depth order. Meant for checking, not speed.
"""
import numpy as np

from .camera import Camera
from .projection import project_gaussians


def _alpha(q, o):
    t = np.clip(q - 8.0, 0.0, 1.0)
    fade = 1.0 - (6.0 * t**5 - 15.0 * t**4 + 10.0 * t**3)
    return np.where(q < 9.0, o * np.exp(-0.5 * q) * fade, 0.0)


def render_bruteforce(params: dict, cam: Camera, background=(1.0, 1.0, 1.0)):
    """Return (image, transmittance, weights) with weights[h, w, i] per Gaussian."""
    p = project_gaussians(params["means"], params["log_scales"], params["quats"],
                          params["opacity_logits"], params["colors"], cam)
    bg = np.asarray(background, dtype=float)
    n = p.means2d.shape[0]
    order = sorted((i for i in range(n) if p.valid[i]), key=lambda i: (float(p.depths[i]), i))
    ys, xs = np.mgrid[0:cam.height, 0:cam.width].astype(float)
    color = np.zeros((cam.height, cam.width, 3))
    trans = np.ones((cam.height, cam.width))
    active = np.ones((cam.height, cam.width), dtype=bool)
    weights = np.zeros((cam.height, cam.width, n))
    for i in order:
        dx = xs - p.means2d[i, 0]
        dy = ys - p.means2d[i, 1]
        a, b, c = p.conics[i]
        alpha = _alpha(a * dx * dx + 2 * b * dx * dy + c * dy * dy, p.opacities[i])
        alpha = np.where(active & (alpha > 0.0), alpha, 0.0)
        w = alpha * trans
        weights[:, :, i] = w
        color += w[..., None] * p.rgb[i]
        trans = trans * (1.0 - alpha)
        active &= trans >= 1e-4
    return color + trans[..., None] * bg, trans, weights
