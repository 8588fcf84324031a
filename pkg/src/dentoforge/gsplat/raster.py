"""Tile-based differentiable rasterizer for :class:`SceneGaussians`."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import _accel
from . import raster_kernels as rk
from .camera import Camera
from .gaussians import FIELDS, GaussianGrads, SceneGaussians, check_finite
from .projection import Projected, project_backward, project_gaussians

TILE = rk.TILE


@dataclass
class Binning:
    inst_gauss: np.ndarray   # Gaussian index per instance, grouped by tile, depth-sorted
    tile_start: np.ndarray
    tile_end: np.ndarray
    tiles_x: int
    tiles_y: int


@dataclass
class RenderResult:
    image: np.ndarray          # (H, W, 3)
    transmittance: np.ndarray  # (H, W)
    proj: Projected
    binning: Binning
    camera: Camera
    background: np.ndarray
    offsets: np.ndarray        # tooth boundaries in the flat Gaussian arrays
    backend: str


def depth_order(depths: np.ndarray) -> np.ndarray:
    """Front-to-back order, ties broken by global Gaussian index."""
    return np.lexsort((np.arange(depths.shape[0]), depths))


def bin_gaussians(proj: Projected, width: int, height: int) -> Binning:
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    order = depth_order(proj.depths)
    order = order[proj.valid[order]]
    m = proj.means2d[order]
    r = proj.radii[order]
    x0 = np.floor((m[:, 0] - r[:, 0]) / TILE).astype(np.int64)
    x1 = np.floor((m[:, 0] + r[:, 0]) / TILE).astype(np.int64)
    y0 = np.floor((m[:, 1] - r[:, 1]) / TILE).astype(np.int64)
    y1 = np.floor((m[:, 1] + r[:, 1]) / TILE).astype(np.int64)
    on_screen = (x1 >= 0) & (x0 < tiles_x) & (y1 >= 0) & (y0 < tiles_y)
    order, x0, x1, y0, y1 = order[on_screen], x0[on_screen], x1[on_screen], y0[on_screen], y1[on_screen]
    x0, x1 = np.clip(x0, 0, tiles_x - 1), np.clip(x1, 0, tiles_x - 1)
    y0, y1 = np.clip(y0, 0, tiles_y - 1), np.clip(y1, 0, tiles_y - 1)
    nx = x1 - x0 + 1
    per = nx * (y1 - y0 + 1)
    rank = np.repeat(np.arange(order.shape[0]), per)
    local = np.arange(rank.shape[0]) - np.repeat(np.cumsum(per) - per, per)
    tiles = (y0[rank] + local // nx[rank]) * tiles_x + x0[rank] + local % nx[rank]
    srt = np.lexsort((rank, tiles))
    tiles, gauss = tiles[srt], order[rank[srt]]
    counts = np.bincount(tiles, minlength=n_tiles)
    tile_end = np.cumsum(counts).astype(np.int64)
    tile_start = (tile_end - counts).astype(np.int64)
    return Binning(gauss.astype(np.int64), tile_start, tile_end, tiles_x, tiles_y)


def _kernels(backend: Optional[str]):
    backend = backend or _accel.backend()
    if backend == "numba":
        return backend, rk.forward_nb, rk.backward_nb
    if backend == "numpy":
        return backend, rk.forward_np, rk.backward_np
    raise ValueError(f"unknown backend {backend!r}")


def render_flat(params: dict, cam: Camera, background=(1.0, 1.0, 1.0), backend: Optional[str] = None,
                offsets: Optional[np.ndarray] = None) -> RenderResult:
    """Render concatenated Gaussian arrays (keys as in ``FIELDS``)."""
    bg = np.asarray(background, dtype=float).reshape(3)
    proj = project_gaussians(params["means"], params["log_scales"], params["quats"],
                             params["opacity_logits"], params["colors"], cam)
    binning = bin_gaussians(proj, cam.width, cam.height)
    backend, fwd, _ = _kernels(backend)
    image, trans = fwd(proj.means2d, proj.conics, proj.opacities, proj.rgb, binning.inst_gauss,
                       binning.tile_start, binning.tile_end, binning.tiles_x, cam.width, cam.height, bg)
    if offsets is None:
        offsets = np.array([0, proj.means2d.shape[0]])
    return RenderResult(image, trans, proj, binning, cam, bg, offsets, backend)


def rasterize(scene: SceneGaussians, cam: Camera, background=(1.0, 1.0, 1.0),
              backend: Optional[str] = None) -> RenderResult:
    """Composite the scene front to back over ``background``.

    Returns the (H, W, 3) image and per-pixel residual transmittance inside
    a :class:`RenderResult` that :func:`rasterize_backward` consumes.
    """
    check_finite(scene)
    return render_flat(scene.flat(), cam, background, backend, offsets=scene.offsets())


def render_backward_flat(res: RenderResult, grad_image: np.ndarray) -> dict:
    """Gradients of ``sum(grad_image * image)`` w.r.t. the flat parameters."""
    grad_image = np.ascontiguousarray(grad_image, dtype=float).reshape(res.image.shape)
    _, _, bwd = _kernels(res.backend)
    p, b, cam = res.proj, res.binning, res.camera
    inst = bwd(p.means2d, p.conics, p.opacities, p.rgb, b.inst_gauss, b.tile_start, b.tile_end, b.tiles_x,
               cam.width, cam.height, res.background, grad_image)
    n = p.means2d.shape[0]
    per_g = np.zeros((n, 9))
    # sequential scatter keeps the reduction order fixed
    np.add.at(per_g, b.inst_gauss, inst)
    return project_backward(p, cam, per_g[:, 0:2], per_g[:, 2:5], per_g[:, 5], per_g[:, 6:9])


def rasterize_backward(res: RenderResult, grad_image: np.ndarray) -> list:
    """Per-tooth :class:`GaussianGrads` for a scene rendered by :func:`rasterize`."""
    flat = render_backward_flat(res, grad_image)
    off = res.offsets
    return [GaussianGrads(*(flat[f][off[i]:off[i + 1]] for f in FIELDS)) for i in range(len(off) - 1)]
