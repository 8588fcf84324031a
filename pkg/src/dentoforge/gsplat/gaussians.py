"""Gaussian primitives, per-tooth groups, and layout <-> Gaussian conversion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..jawgraph import ToothLayout, layout_rotation, wrap_angle

SH_C0 = 0.28209479177387814
FIELDS = ("means", "log_scales", "quats", "opacity_logits", "colors")
FIELD_WIDTH = {"means": 3, "log_scales": 3, "quats": 4, "opacity_logits": 1, "colors": 3}


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions in (w, x, y, z) order.

    Quaternions are normalized first.
    """
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Gaussian3D:
    center: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


def covariance(g: Gaussian3D) -> np.ndarray:
    """``R diag(exp(log_scale))^2 R^T`` for a single Gaussian."""
    return covariances(np.asarray(g.log_scale)[None], np.asarray(g.rotation)[None])[0]


def covariances(log_scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    rot = quat_to_rotmat(quats)
    m = rot * np.exp(log_scales)[:, None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


@dataclass
class ToothGaussians:
    """Gaussians of one tooth, stored as parallel arrays."""

    tooth_id: int
    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    layout: Optional[ToothLayout] = None

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float).reshape(-1, 3)
        k = self.means.shape[0]
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(k, 3)
        self.quats = np.asarray(self.quats, dtype=float).reshape(k, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(k)
        self.colors = np.asarray(self.colors, dtype=float).reshape(k, 3)

    def __len__(self):
        return self.means.shape[0]

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.means[i].copy(), self.log_scales[i].copy(), self.quats[i].copy(),
                          float(self.opacity_logits[i]), self.colors[i].copy())

    def copy(self) -> "ToothGaussians":
        return replace(self, **{f: getattr(self, f).copy() for f in FIELDS})

    def translated(self, t) -> "ToothGaussians":
        out = self.copy()
        out.means = out.means + np.asarray(t, dtype=float)
        return out


@dataclass
class GaussianGrads:
    """Gradient arrays matching the fields of :class:`ToothGaussians`."""

    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "GaussianGrads":
        return cls(np.zeros((k, 3)), np.zeros((k, 3)), np.zeros((k, 4)), np.zeros(k), np.zeros((k, 3)))

    @classmethod
    def zeros_like(cls, tooth: ToothGaussians) -> "GaussianGrads":
        return cls.zeros(len(tooth))

    def scaled(self, c: float) -> "GaussianGrads":
        return GaussianGrads(*(c * getattr(self, f) for f in FIELDS))

    def __add__(self, other: "GaussianGrads") -> "GaussianGrads":
        return GaussianGrads(*(getattr(self, f) + getattr(other, f) for f in FIELDS))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(getattr(self, f)), initial=0.0)) for f in FIELDS)


@dataclass
class SceneGaussians:
    teeth: list = field(default_factory=list)

    def __post_init__(self):
        ids = [t.tooth_id for t in self.teeth]
        if len(set(ids)) != len(ids):
            raise ValueError("tooth indices must be unique in a scene")

    def __len__(self):
        return len(self.teeth)

    @property
    def tooth_ids(self) -> list:
        return [t.tooth_id for t in self.teeth]

    def tooth(self, tooth_id: int) -> ToothGaussians:
        for t in self.teeth:
            if t.tooth_id == tooth_id:
                return t
        raise KeyError(tooth_id)

    def copy(self) -> "SceneGaussians":
        return SceneGaussians([t.copy() for t in self.teeth])

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(t) for t in self.teeth])]).astype(np.int64)

    def flat(self) -> dict:
        """Concatenate all teeth into one set of arrays."""
        if not self.teeth:
            return {
                "means": np.zeros((0, 3)), "log_scales": np.zeros((0, 3)), "quats": np.zeros((0, 4)),
                "opacity_logits": np.zeros(0), "colors": np.zeros((0, 3)),
            }
        return {f: np.concatenate([getattr(t, f) for t in self.teeth]) for f in FIELDS}

    def split_grads(self, flat: dict) -> list:
        off = self.offsets()
        return [GaussianGrads(*(flat[f][off[i]:off[i + 1]] for f in FIELDS)) for i in range(len(self.teeth))]


# --------------------------------------------------------------------------
# layout conversion


def init_from_layout(layout: ToothLayout, n: int, seed: int = 0, tooth_id: int = 0) -> ToothGaussians:
    """``n`` gray, half-opaque isotropic Gaussians uniform in the layout box."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    local = (rng.random((n, 3)) * 2.0 - 1.0) * layout.half_extents
    means = local @ layout.rotation().T + layout.center
    s = min(layout.h, layout.w, layout.l) / (2.0 * n ** (1.0 / 3.0))
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return ToothGaussians(
        tooth_id=tooth_id,
        means=means,
        log_scales=np.full((n, 3), math.log(s)),
        quats=quats,
        opacity_logits=np.zeros(n),
        colors=np.zeros((n, 3)),
        layout=layout,
    )


def _assign_axes(evecs: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Permute/sign-flip principal axes (columns) to best match ``ref``."""
    from itertools import permutations

    best, best_score = None, -np.inf
    for perm in permutations(range(3)):
        cand = evecs[:, perm]
        score = np.sum(np.abs(np.sum(cand * ref, axis=0)))
        if score > best_score + 1e-12:
            best, best_score = cand, score
    signs = np.sign(np.sum(best * ref, axis=0))
    signs[signs == 0] = 1.0
    return best * signs


def layout_from_gaussians(tooth: ToothGaussians) -> ToothLayout:
    """Fit a layout box to a tooth's Gaussians.

    Center is the mean of the centers; axes come from the principal axes of
    the centers (matched to the tooth's current layout frame) reduced to the
    two layout angles; each extent is the spread of the centers along its
    axis plus three median axis scales on either side.
    """
    if len(tooth) < 1:
        raise ValueError("tooth has no Gaussians")
    pts = tooth.means
    c = pts.mean(axis=0)
    d = pts - c
    ref = tooth.layout.rotation() if tooth.layout is not None else np.eye(3)
    cov = d.T @ d / len(pts)
    if np.allclose(cov, 0.0):
        axes = ref
    else:
        _, evecs = np.linalg.eigh(cov)
        axes = _assign_axes(evecs, ref)
    ex, ez = axes[:, 0], axes[:, 2]
    k = math.atan2(ex[1], ex[0])
    ck, sk = math.cos(k), math.sin(k)
    ez_local = np.array([ck * ez[0] + sk * ez[1], -sk * ez[0] + ck * ez[1], ez[2]])
    r = math.atan2(-ez_local[1], ez_local[2])
    rot = layout_rotation(k, r)
    proj = d @ rot
    spread = proj.max(axis=0) - proj.min(axis=0)
    pad = 6.0 * float(np.median(np.exp(tooth.log_scales)))
    w, l, h = spread + pad
    return ToothLayout(float(c[0]), float(c[1]), float(c[2]), float(h), float(w), float(l), wrap_angle(k), wrap_angle(r))


def normalize_quats(tooth: ToothGaussians) -> None:
    n = np.linalg.norm(tooth.quats, axis=1, keepdims=True)
    n[n == 0] = 1.0
    tooth.quats = tooth.quats / n


def check_finite(scene: SceneGaussians) -> None:
    for t in scene.teeth:
        for f in FIELDS:
            arr = getattr(t, f).reshape(len(t), -1)
            bad = ~np.all(np.isfinite(arr), axis=1)
            if np.any(bad):
                raise FloatingPointError(
                    f"non-finite {f} in tooth {t.tooth_id}, Gaussian {int(np.argmax(bad))}"
                )
