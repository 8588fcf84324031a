"""PSNR, Chamfer distance, F-score and the aggregate evaluation summary."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import _accel
from ._accel import njit, prange
from .collision import penetration_distance

PSNR_CAP = 99.0
DEFAULT_TAU = 0.3
BRUTE_FORCE_LIMIT = 100_000


def psnr(a, b, max_val: float = 1.0) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val * max_val / mse))


# --------------------------------------------------------------------------
# nearest neighbours


@njit(parallel=True)
def _nn_dist_nb(queries, refs):
    out = np.empty(queries.shape[0])
    for i in prange(queries.shape[0]):
        best = np.inf
        qx, qy, qz = queries[i, 0], queries[i, 1], queries[i, 2]
        for j in range(refs.shape[0]):
            dx = qx - refs[j, 0]
            dy = qy - refs[j, 1]
            dz = qz - refs[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


def _nn_dist_np(queries, refs, budget: int = 4_000_000):
    out = np.empty(queries.shape[0])
    chunk = max(1, budget // refs.shape[0])
    for s in range(0, queries.shape[0], chunk):
        q = queries[s:s + chunk]
        # explicit differences; the |q|^2 - 2 q.r + |r|^2 expansion cancels badly near zero
        d2 = np.sum((q[:, None, :] - refs[None, :, :]) ** 2, axis=2)
        out[s:s + chunk] = np.sqrt(d2.min(axis=1))
    return out


def nearest_distances(queries, refs, backend: Optional[str] = None) -> np.ndarray:
    """Distance from every query point to its nearest reference point."""
    queries = np.ascontiguousarray(queries, dtype=float).reshape(-1, 3)
    refs = np.ascontiguousarray(refs, dtype=float).reshape(-1, 3)
    if queries.shape[0] == 0 or refs.shape[0] == 0:
        raise ValueError("point sets must be non-empty")
    if max(queries.shape[0], refs.shape[0]) > BRUTE_FORCE_LIMIT:
        from scipy.spatial import cKDTree

        return cKDTree(refs).query(queries, k=1)[0]
    backend = backend or _accel.backend()
    if backend == "numba":
        return _nn_dist_nb(queries, refs)
    return _nn_dist_np(queries, refs)


def chamfer(a, b, backend: Optional[str] = None) -> float:
    """Symmetric mean of unsquared nearest-neighbour distances."""
    return 0.5 * (float(np.mean(nearest_distances(a, b, backend))) + float(np.mean(nearest_distances(b, a, backend))))


def fscore(a, b, tau: float = DEFAULT_TAU, backend: Optional[str] = None) -> float:
    if tau <= 0:
        raise ValueError("tau must be positive")
    precision = float(np.mean(nearest_distances(a, b, backend) <= tau))
    recall = float(np.mean(nearest_distances(b, a, backend) <= tau))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# --------------------------------------------------------------------------
# summary


@dataclass(frozen=True)
class EvalSummary:
    psnr_db: Optional[float]
    chamfer_mm: Optional[float]
    fscore: Optional[float]
    tau_mm: float
    pd_mm: float
    n_views: int = 0
    n_teeth: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalSummary":
        return cls(**json.loads(text))


TABLE_COLUMNS = (("sample", 12), ("psnr_db", 9), ("chamfer_mm", 11), ("fscore", 8), ("tau_mm", 7), ("pd_mm", 8))


def _cell(v, width):
    if v is None:
        return "-".rjust(width)
    if isinstance(v, float):
        return f"{v:{width}.4f}"
    return str(v).rjust(width)


def format_table(rows: Sequence[tuple]) -> str:
    """Fixed-column text table of ``(sample name, EvalSummary)`` rows."""
    lines = [" ".join(name.rjust(w) for name, w in TABLE_COLUMNS)]
    for name, s in rows:
        vals = (name, s.psnr_db, s.chamfer_mm, s.fscore, s.tau_mm, s.pd_mm)
        lines.append(" ".join(_cell(v, w) for v, (_, w) in zip(vals, TABLE_COLUMNS)))
    return "\n".join(lines)


def evaluate(scene, truth_points: dict, cameras: Sequence = (), target_renders: Sequence = (),
             tau: float = DEFAULT_TAU, order=None, backend: Optional[str] = None) -> EvalSummary:
    """Score a predicted scene against withheld ground truth.

    ``truth_points`` maps restored tooth ids to their ground-truth points;
    Chamfer and F-score compare those teeth's Gaussian centers and are
    averaged over teeth. PSNR averages over ``cameras`` against
    ``target_renders`` (white background).
    """
    cds, fs = [], []
    for tid in sorted(truth_points):
        centers = scene.tooth(tid).means
        cds.append(chamfer(centers, truth_points[tid], backend))
        fs.append(fscore(centers, truth_points[tid], tau, backend))
    ps = []
    if len(cameras) != len(target_renders):
        raise ValueError("cameras and target renders must pair up")
    if cameras:
        from .gsplat.raster import rasterize

        for cam, tgt in zip(cameras, target_renders):
            ps.append(psnr(rasterize(scene, cam, backend=backend).image, tgt))
    pd = penetration_distance(scene, order).pd_mm if len(scene) else 0.0
    return EvalSummary(
        psnr_db=float(np.mean(ps)) if ps else None,
        chamfer_mm=float(np.mean(cds)) if cds else None,
        fscore=float(np.mean(fs)) if fs else None,
        tau_mm=float(tau),
        pd_mm=float(pd),
        n_views=len(ps),
        n_teeth=len(cds),
    )
