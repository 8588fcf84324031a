"""Glue between the modules: datasets on disk, scene setup, cameras, targets."""
from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import jawgraph
from .config import PipelineConfig
from .gsplat.camera import orbit_cameras
from .gsplat.gaussians import SceneGaussians, ToothGaussians, init_from_layout
from .gsplat.io import load_points, save_points
from .gsplat.raster import rasterize
from .jawgraph import JawGraph, arch_order
from .layoutdiffusion.denoiser import DenoiserConfig
from .synthjaw import ArchParams, jaw_points, lower_params, sample_jaw, sample_tooth_points

INDEX_FILE = "index.json"
DATASET_VERSION = 1
# degree-0 coefficients giving an ivory albedo for reference teeth
TOOTH_COLOR_DC = (1.2, 1.0, 0.6)


class DatasetError(OSError):
    pass


def denoiser_config(cfg: PipelineConfig) -> DenoiserConfig:
    p = cfg.paper
    width = p.transformer_width if cfg.diffusion.profile == "paper" else cfg.diffusion.toy_width
    if cfg.diffusion.profile not in ("paper", "toy"):
        raise ValueError(f"unknown denoiser profile {cfg.diffusion.profile!r}")
    return DenoiserConfig(width=width, blocks=p.transformer_blocks, heads=p.transformer_heads, dropout=p.dropout)


def tooth_order(graph: JawGraph) -> list:
    return [graph.nodes[i].tooth_id for i in arch_order(graph)]


# --------------------------------------------------------------------------
# datasets


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def write_dataset(out_dir, n: int, seed: int, points_per_tooth: int = 2048, jaw_side: str = "upper",
                  force: bool = False) -> list:
    """Write ``n`` synthetic jaws with per-tooth point sets and an index."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    params = ArchParams() if jaw_side == "upper" else lower_params()
    samples = []
    for i in range(n):
        sid = f"jaw_{i:04d}"
        s = sample_seed(seed, i)
        g = sample_jaw(params, s)
        jawgraph.save(g, out / f"{sid}.json")
        pdir = out / sid
        pdir.mkdir(exist_ok=True)
        for tid, pts in jaw_points(g, points_per_tooth, seed=s).items():
            save_points(pdir / f"points_{tid}.ply", pts, comments=[f"tooth {tid}"])
        samples.append({"id": sid, "seed": s})
    index = {"version": DATASET_VERSION, "seed": seed, "jaw_side": jaw_side, "points_per_tooth": points_per_tooth,
             "samples": samples}
    (out / INDEX_FILE).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return samples


def read_index(data_dir) -> dict:
    path = Path(data_dir) / INDEX_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"{path}: dataset index not found") from None


def load_dataset(data_dir) -> list:
    """``[(sample id, JawGraph)]`` in index order."""
    idx = read_index(data_dir)
    out = []
    for s in idx["samples"]:
        path = Path(data_dir) / f"{s['id']}.json"
        if not path.exists():
            raise DatasetError(f"{path}: missing jaw file for sample {s['id']}")
        out.append((s["id"], jawgraph.load(path)))
    return out


def load_sample_points(data_dir, sample_id: str, tooth_ids: Optional[Sequence[int]] = None) -> dict:
    pdir = Path(data_dir) / sample_id
    if not pdir.is_dir():
        raise DatasetError(f"{pdir}: no point sets for sample {sample_id}")
    if tooth_ids is None:
        tooth_ids = sorted(int(p.stem.split("_")[1]) for p in pdir.glob("points_*.ply"))
    out = {}
    for tid in tooth_ids:
        path = pdir / f"points_{tid}.ply"
        if not path.exists():
            raise DatasetError(f"{path}: missing ground-truth points for sample {sample_id}, tooth {tid}")
        out[tid] = load_points(path)
    return out


# --------------------------------------------------------------------------
# scenes and cameras


def scene_from_layouts(graph: JawGraph, n: int, seed: int = 0) -> SceneGaussians:
    """Layout-initialized Gaussians for every tooth, in arch order."""
    teeth = []
    for tid in tooth_order(graph):
        node = graph.nodes[graph.index_of(tid)]
        if node.layout is None:
            raise ValueError(f"tooth {tid} has no layout to initialize from")
        teeth.append(init_from_layout(node.layout, n, seed=sample_seed(seed, tid), tooth_id=tid))
    return SceneGaussians(teeth)


def points_to_gaussians(tooth_id: int, points: np.ndarray, layout=None, color_dc=TOOTH_COLOR_DC,
                        opacity_logit: float = 2.0) -> ToothGaussians:
    """Opaque isotropic Gaussians on a point set, sized by its mean spacing."""
    pts = np.asarray(points, dtype=float)
    k = pts.shape[0]
    span = np.ptp(pts, axis=0) if k > 1 else np.ones(3)
    spacing = float(np.prod(np.maximum(span, 1e-3)) / k) ** (1.0 / 3.0)
    quats = np.zeros((k, 4))
    quats[:, 0] = 1.0
    return ToothGaussians(tooth_id=tooth_id, means=pts, log_scales=np.full((k, 3), math.log(0.5 * spacing)),
                          quats=quats, opacity_logits=np.full(k, opacity_logit),
                          colors=np.tile(np.asarray(color_dc, dtype=float), (k, 1)), layout=layout)


def proxy_scene(graph: JawGraph, n: int, seed: int = 0) -> SceneGaussians:
    """Tooth-shaped reference Gaussians sampled inside each node's layout box."""
    teeth = []
    for tid in tooth_order(graph):
        lay = graph.nodes[graph.index_of(tid)].layout
        pts = sample_tooth_points(lay, jawgraph.category_index(tid), n, seed=seed)
        teeth.append(points_to_gaussians(tid, pts, layout=lay))
    return SceneGaussians(teeth)


def layout_bounds(layouts) -> tuple:
    corners = []
    for lay in layouts:
        if lay is None:
            continue
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        corners.append((signs * lay.half_extents) @ lay.rotation().T + lay.center)
    pts = np.concatenate(corners)
    return pts.min(axis=0), pts.max(axis=0)


def jaw_cameras(layouts, cfg: PipelineConfig, n_views: Optional[int] = None, size: Optional[int] = None) -> list:
    lo, hi = layout_bounds(layouts)
    c = cfg.camera
    w = size or c.width
    h = size or c.height
    return orbit_cameras(0.5 * (lo + hi), float(np.max(hi - lo)), n_views=n_views or c.n_views,
                         elevations_deg=c.elevations_deg, radius_factor=c.radius_factor, width=w, height=h,
                         fov_deg=c.fov_deg)


def reference_targets(truth: SceneGaussians, cameras: Sequence, instance_ids: Sequence[int] = (),
                      backend: Optional[str] = None) -> dict:
    """Renders keyed ``("scene", view)`` and ``(tooth_id, view)`` on white."""
    targets = {}
    for v, cam in enumerate(cameras):
        targets[("scene", v)] = rasterize(truth, cam, backend=backend).image
        for tid in instance_ids:
            targets[(tid, v)] = rasterize(SceneGaussians([truth.tooth(tid)]), cam, backend=backend).image
    return targets


def thread_count(flag: Optional[int]) -> Optional[int]:
    if flag is not None:
        return flag
    env = os.environ.get("DENTOFORGE_THREADS")
    return int(env) if env else None
