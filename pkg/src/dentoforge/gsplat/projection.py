"""EWA projection of 3D Gaussians and its analytic backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .gaussians import SH_C0, Gaussian3D, covariances, quat_to_rotmat, sigmoid

NEAR = 0.01
LOWPASS = 0.3
SIGMA_CUTOFF = 3.0


@dataclass
class Projected:
    """Per-Gaussian screen-space quantities for one camera."""

    means2d: np.ndarray     # (N, 2) px
    cov2d: np.ndarray       # (N, 2, 2) px^2, low-pass included
    conics: np.ndarray      # (N, 3) entries (a, b, c) of the inverse covariance
    depths: np.ndarray      # (N,) view-space z, mm
    opacities: np.ndarray   # (N,)
    rgb: np.ndarray         # (N, 3)
    radii: np.ndarray       # (N, 2) half-extent of the 3-sigma box, px
    valid: np.ndarray       # (N,) bool, False when culled
    # cached for the backward pass
    cam_pts: np.ndarray
    jac: np.ndarray
    cov3d: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    quats_n: np.ndarray
    quat_norm: np.ndarray
    colors_raw: np.ndarray


def project_gaussians(means, log_scales, quats, opacity_logits, colors, cam: Camera) -> Projected:
    means = np.asarray(means, dtype=float).reshape(-1, 3)
    n = means.shape[0]
    qn = np.linalg.norm(quats, axis=1)
    quats_n = quats / qn[:, None] if n else quats
    rot = quat_to_rotmat(quats_n) if n else np.zeros((0, 3, 3))
    scales = np.exp(log_scales)
    cov3d = covariances(log_scales, quats_n) if n else np.zeros((0, 3, 3))

    t = cam.world_to_camera(means)
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    valid = z > NEAR
    zs = np.where(valid, z, 1.0)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / zs
    jac[:, 0, 2] = -cam.fx * x / zs**2
    jac[:, 1, 1] = cam.fy / zs
    jac[:, 1, 2] = -cam.fy * y / zs**2
    tm = jac @ cam.rotation
    cov2d = tm @ cov3d @ np.swapaxes(tm, 1, 2)
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    det = np.where(valid, det, 1.0)
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    means2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    radii = SIGMA_CUTOFF * np.sqrt(np.stack([a, c], axis=1))
    rgb = np.clip(0.5 + SH_C0 * colors, 0.0, 1.0)
    return Projected(
        means2d=means2d, cov2d=cov2d, conics=conics, depths=z, opacities=sigmoid(opacity_logits),
        rgb=rgb, radii=radii, valid=valid, cam_pts=t, jac=jac, cov3d=cov3d, rot=rot, scales=scales,
        quats_n=quats_n, quat_norm=qn, colors_raw=np.asarray(colors, dtype=float),
    )


def project(g: Gaussian3D, cam: Camera):
    """Project one Gaussian: (2D mean, 2D covariance, depth) or ``None`` if culled."""
    p = project_gaussians(np.asarray(g.center)[None], np.asarray(g.log_scale)[None],
                          np.asarray(g.rotation, dtype=float)[None], np.array([g.opacity_logit]),
                          np.asarray(g.color)[None], cam)
    if not p.valid[0]:
        return None
    return p.means2d[0], p.cov2d[0], float(p.depths[0])


def _quat_backward(q, g_rot):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = g_rot
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=1)


def project_backward(p: Projected, cam: Camera, g_means2d, g_conics, g_opac, g_rgb) -> dict:
    """Chain screen-space gradients back to the raw Gaussian parameters."""
    n = p.means2d.shape[0]
    v = p.valid.astype(float)
    g_means2d = g_means2d * v[:, None]
    g_conics = g_conics * v[:, None]

    # conic = inverse(cov2d); b is shared by both off-diagonal entries
    con = np.zeros((n, 2, 2))
    con[:, 0, 0], con[:, 0, 1], con[:, 1, 0], con[:, 1, 1] = p.conics[:, 0], p.conics[:, 1], p.conics[:, 1], p.conics[:, 2]
    gcon = np.zeros((n, 2, 2))
    gcon[:, 0, 0] = g_conics[:, 0]
    gcon[:, 0, 1] = gcon[:, 1, 0] = 0.5 * g_conics[:, 1]
    gcon[:, 1, 1] = g_conics[:, 2]
    g_cov2d = -con @ gcon @ con

    tm = p.jac @ cam.rotation
    g_cov3d = np.swapaxes(tm, 1, 2) @ g_cov2d @ tm
    g_tm = 2.0 * g_cov2d @ tm @ p.cov3d
    g_jac = g_tm @ cam.rotation.T

    x, y = p.cam_pts[:, 0], p.cam_pts[:, 1]
    z = np.where(p.valid, p.cam_pts[:, 2], 1.0)
    fx, fy = cam.fx, cam.fy
    g_t = np.zeros((n, 3))
    g_t[:, 0] = g_jac[:, 0, 2] * (-fx / z**2) + g_means2d[:, 0] * fx / z
    g_t[:, 1] = g_jac[:, 1, 2] * (-fy / z**2) + g_means2d[:, 1] * fy / z
    g_t[:, 2] = (g_jac[:, 0, 0] * (-fx / z**2) + g_jac[:, 0, 2] * (2 * fx * x / z**3)
                 + g_jac[:, 1, 1] * (-fy / z**2) + g_jac[:, 1, 2] * (2 * fy * y / z**3)
                 - g_means2d[:, 0] * fx * x / z**2 - g_means2d[:, 1] * fy * y / z**2)
    g_means = g_t @ cam.rotation

    # cov3d = M M^T with M = R diag(s)
    m = p.rot * p.scales[:, None, :]
    g_m = 2.0 * (0.5 * (g_cov3d + np.swapaxes(g_cov3d, 1, 2))) @ m
    g_scales = np.sum(g_m * p.rot, axis=1)
    g_log_scales = g_scales * p.scales
    g_rot = g_m * p.scales[:, None, :]
    g_qn = _quat_backward(p.quats_n, g_rot)
    qn = p.quats_n
    g_quats = (g_qn - qn * np.sum(qn * g_qn, axis=1, keepdims=True)) / p.quat_norm[:, None]

    g_logits = g_opac * v * p.opacities * (1.0 - p.opacities)
    raw = 0.5 + SH_C0 * p.colors_raw
    inside = (raw > 0.0) & (raw < 1.0)
    g_colors = g_rgb * v[:, None] * SH_C0 * inside
    return {
        "means": g_means * v[:, None],
        "log_scales": g_log_scales * v[:, None],
        "quats": g_quats * v[:, None],
        "opacity_logits": g_logits,
        "colors": g_colors,
    }
