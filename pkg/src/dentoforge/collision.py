"""Intravariance-based collision loss between arch-adjacent teeth.

For an anchor tooth with Gaussian centers ``P`` the centroid ``m`` and the
intravariance ``R = mean ||p - m||`` define a soft exclusion ball; every
center of the left and right neighbours closer than ``R`` to ``m`` pays
``R - dist``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import _accel
from ._accel import njit


def centroid(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("centroid needs at least one point")
    return points.mean(axis=0)


def intravariance(points) -> float:
    points = np.asarray(points, dtype=float)
    m = centroid(points)
    return float(np.mean(np.linalg.norm(points - m, axis=1)))


# --------------------------------------------------------------------------
# kernels


@njit
def _hinge_loss_nb(anchor, neighbor):
    k = anchor.shape[0]
    m0 = 0.0
    m1 = 0.0
    m2 = 0.0
    for i in range(k):
        m0 += anchor[i, 0]
        m1 += anchor[i, 1]
        m2 += anchor[i, 2]
    m0 /= k
    m1 /= k
    m2 /= k
    r = 0.0
    for i in range(k):
        a0 = anchor[i, 0] - m0
        a1 = anchor[i, 1] - m1
        a2 = anchor[i, 2] - m2
        r += np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
    r /= k
    loss = 0.0
    for j in range(neighbor.shape[0]):
        q0 = neighbor[j, 0] - m0
        q1 = neighbor[j, 1] - m1
        q2 = neighbor[j, 2] - m2
        h = r - np.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
        if h > 0.0:
            loss += h
    return loss


@njit
def _hinge_grad_nb(anchor, neighbor, g_anchor, g_neighbor):
    """Accumulate d(loss)/d(points) into the given buffers; returns loss."""
    k = anchor.shape[0]
    m = np.zeros(3)
    for i in range(k):
        for c in range(3):
            m[c] += anchor[i, c]
    for c in range(3):
        m[c] /= k
    u = np.zeros((k, 3))
    usum = np.zeros(3)
    r = 0.0
    for i in range(k):
        d0 = anchor[i, 0] - m[0]
        d1 = anchor[i, 1] - m[1]
        d2 = anchor[i, 2] - m[2]
        n = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        r += n
        if n > 0.0:
            u[i, 0] = d0 / n
            u[i, 1] = d1 / n
            u[i, 2] = d2 / n
            usum[0] += u[i, 0]
            usum[1] += u[i, 1]
            usum[2] += u[i, 2]
    r /= k
    n_active = 0
    vsum = np.zeros(3)
    loss = 0.0
    for j in range(neighbor.shape[0]):
        q0 = neighbor[j, 0] - m[0]
        q1 = neighbor[j, 1] - m[1]
        q2 = neighbor[j, 2] - m[2]
        dist = np.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
        h = r - dist
        if h > 0.0:
            loss += h
            n_active += 1
            if dist > 0.0:
                v0 = q0 / dist
                v1 = q1 / dist
                v2 = q2 / dist
                g_neighbor[j, 0] -= v0
                g_neighbor[j, 1] -= v1
                g_neighbor[j, 2] -= v2
                vsum[0] += v0
                vsum[1] += v1
                vsum[2] += v2
    if n_active > 0:
        for i in range(k):
            for c in range(3):
                g_anchor[i, c] += n_active * (u[i, c] - usum[c] / k) / k + vsum[c] / k
    return loss


def _hinge_loss_np(anchor, neighbor):
    m = anchor.mean(axis=0)
    r = np.mean(np.linalg.norm(anchor - m, axis=1))
    h = r - np.linalg.norm(neighbor - m, axis=1)
    return float(np.sum(h[h > 0.0]))


def _hinge_grad_np(anchor, neighbor, g_anchor, g_neighbor):
    k = anchor.shape[0]
    m = anchor.mean(axis=0)
    da = anchor - m
    na = np.linalg.norm(da, axis=1)
    u = np.divide(da, na[:, None], out=np.zeros_like(da), where=na[:, None] > 0)
    r = na.mean()
    q = neighbor - m
    dist = np.linalg.norm(q, axis=1)
    h = r - dist
    active = h > 0.0
    v = np.divide(q, dist[:, None], out=np.zeros_like(q), where=(dist[:, None] > 0) & active[:, None])
    g_neighbor -= v
    n_active = int(active.sum())
    if n_active:
        g_anchor += n_active * (u - u.sum(axis=0) / k) / k + v.sum(axis=0) / k
    return float(np.sum(h[active]))


def _hinge_loss(anchor, neighbor):
    if _accel.USE_NUMBA:
        return float(_hinge_loss_nb(anchor, neighbor))
    return _hinge_loss_np(anchor, neighbor)


def _hinge_grad(anchor, neighbor, g_anchor, g_neighbor):
    if _accel.USE_NUMBA:
        return float(_hinge_grad_nb(anchor, neighbor, g_anchor, g_neighbor))
    return _hinge_grad_np(anchor, neighbor, g_anchor, g_neighbor)


# --------------------------------------------------------------------------
# public API


def _points(obj) -> Optional[np.ndarray]:
    if obj is None:
        return None
    pts = getattr(obj, "means", obj)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected a (K, 3) array of centers")
    return pts


def collision_loss(anchor, left=None, right=None) -> float:
    """Hinge loss of neighbour centers against the anchor's intravariance ball.

    Each argument is a ``(K, 3)`` array or anything with a ``means`` array
    (e.g. :class:`~dentoforge.gsplat.ToothGaussians`). Missing neighbours
    contribute nothing.
    """
    a = _points(anchor)
    if a.shape[0] == 0:
        raise ValueError("anchor needs at least one center")
    total = 0.0
    for nb in (left, right):
        nb = _points(nb)
        if nb is not None and nb.shape[0]:
            total += _hinge_loss(a, nb)
    return total


def collision_grad(anchor, left=None, right=None):
    """Loss and gradients w.r.t. every center of (anchor, left, right).

    Returns ``(loss, g_anchor, g_left, g_right)``; absent neighbours give
    ``None``. At ``dist == R`` the hinge is treated as inactive.
    """
    a = _points(anchor)
    g_a = np.zeros_like(a)
    out = []
    loss = 0.0
    for nb in (left, right):
        nb = _points(nb)
        if nb is None:
            out.append(None)
            continue
        g_n = np.zeros_like(nb)
        if nb.shape[0]:
            loss += _hinge_grad(a, nb, g_a, g_n)
        out.append(g_n)
    return loss, g_a, out[0], out[1]


@dataclass
class CollisionReport:
    pairs: list = field(default_factory=list)        # [(tooth_a, tooth_b, depth_mm)]
    per_tooth: dict = field(default_factory=dict)    # tooth -> Eq.-10 loss as anchor
    total: float = 0.0
    pd_mm: float = 0.0

    def to_json(self) -> str:
        doc = asdict(self)
        doc["pairs"] = [list(p) for p in self.pairs]
        doc["per_tooth"] = {str(k): v for k, v in self.per_tooth.items()}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CollisionReport":
        doc = json.loads(text)
        return cls(
            pairs=[(int(a), int(b), float(d)) for a, b, d in doc["pairs"]],
            per_tooth={int(k): float(v) for k, v in doc["per_tooth"].items()},
            total=float(doc["total"]),
            pd_mm=float(doc["pd_mm"]),
        )


def _max_depth(anchor: np.ndarray, other: np.ndarray) -> float:
    m = anchor.mean(axis=0)
    r = np.mean(np.linalg.norm(anchor - m, axis=1))
    h = r - np.linalg.norm(other - m, axis=1)
    return float(max(0.0, h.max())) if h.size else 0.0


def penetration_distance(teeth, order=None) -> CollisionReport:
    """Penetration-depth proxy over arch-adjacent pairs.

    ``teeth`` maps tooth id to a ``(K, 3)`` center array (or anything with
    ``means``), or is a :class:`SceneGaussians`. ``order`` lists tooth ids
    along the arch; by default the mapping's iteration order is used.
    """
    if hasattr(teeth, "teeth"):
        teeth = {t.tooth_id: t.means for t in teeth.teeth}
    pts = {k: _points(v) for k, v in teeth.items()}
    if not pts:
        raise ValueError("penetration_distance needs at least one tooth")
    order = list(order) if order is not None else list(pts)
    order = [t for t in order if t in pts]
    rep = CollisionReport()
    for i, t in enumerate(order):
        left = pts[order[i - 1]] if i > 0 else None
        right = pts[order[i + 1]] if i + 1 < len(order) else None
        rep.per_tooth[t] = collision_loss(pts[t], left, right)
    rep.total = float(sum(rep.per_tooth[t] for t in order))
    for a, b in zip(order[:-1], order[1:]):
        depth = max(_max_depth(pts[a], pts[b]), _max_depth(pts[b], pts[a]))
        rep.pairs.append((a, b, depth))
    rep.pd_mm = float(np.mean([p[2] for p in rep.pairs])) if rep.pairs else 0.0
    return rep
