"""Procedural ground-truth jaws: arch layouts and per-tooth point clouds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .jawgraph import (
    FEATURE_DIM,
    JawGraph,
    arch_order,
    ToothLayout,
    ToothNode,
    fdi_sequence,
    make_graph,
    wrap_angle,
)

MAX_MISSING = 4
SUPERELLIPSOID_EXPONENT = 0.8

# (h, w, l) means in mm for FDI positions 1..7
UPPER_EXTENTS = {
    1: (10.5, 8.5, 7.0),
    2: (9.0, 6.6, 6.2),
    3: (10.0, 7.6, 8.0),
    4: (8.4, 7.0, 9.0),
    5: (8.0, 6.6, 9.0),
    6: (7.4, 10.2, 11.0),
    7: (7.0, 9.2, 10.6),
}
LOWER_EXTENTS = {
    1: (9.0, 5.4, 6.0),
    2: (9.4, 5.9, 6.3),
    3: (10.5, 6.9, 7.6),
    4: (8.4, 7.0, 7.6),
    5: (8.0, 7.1, 8.2),
    6: (7.4, 11.0, 10.4),
    7: (7.0, 10.4, 10.0),
}


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchParams:
    arch_width: float = 50.0
    arch_depth: float = 36.0
    curvature: float = 1.8
    extent_mean: dict = field(default_factory=lambda: dict(UPPER_EXTENTS))
    extent_sigma: float = 0.3
    position_jitter: float = 0.15
    angle_jitter: float = 0.03
    gap: float = 0.1
    margin: float = 0.4
    jaw_side: str = "upper"

    def check(self):
        if self.arch_width <= 0 or self.arch_depth <= 0:
            raise ValueError("arch_width and arch_depth must be positive")
        if self.curvature <= 0:
            raise ValueError("curvature must be positive")
        if min(self.extent_sigma, self.position_jitter, self.angle_jitter) < 0:
            raise ValueError("prior sigmas must be non-negative")
        if self.gap < 0:
            raise ValueError("gap must be non-negative")
        for p in range(1, 8):
            if p not in self.extent_mean:
                raise ValueError(f"no extent prior for position {p}")


def lower_params(**kw) -> ArchParams:
    kw.setdefault("extent_mean", dict(LOWER_EXTENTS))
    kw.setdefault("arch_width", 46.0)
    kw.setdefault("arch_depth", 32.0)
    return ArchParams(jaw_side="lower", **kw)


# --------------------------------------------------------------------------
# arch curve


class _ArchCurve:
    """Right half of x -> (x, -depth * (x / half_width) ** c), by arc length."""

    def __init__(self, params: ArchParams, n: int = 8001):
        hw = 0.5 * params.arch_width
        self.hw, self.depth, self.c = hw, params.arch_depth, params.curvature
        xs = np.linspace(0.0, 3.0 * hw, n)
        ys = self._y(xs)
        seg = np.hypot(np.diff(xs), np.diff(ys))
        self.xs = xs
        self.s = np.concatenate([[0.0], np.cumsum(seg)])

    def _y(self, x):
        return -self.depth * (np.abs(x) / self.hw) ** self.c

    def point(self, s: float):
        if s > self.s[-1]:
            raise GenerationError("arch too short for the requested teeth")
        x = float(np.interp(s, self.s, self.xs))
        y = float(self._y(x))
        # tangent direction heading away from the midline
        h = 1e-4 * self.hw
        x0, x1 = max(x - h, 0.0), x + h
        tx, ty = x1 - x0, float(self._y(x1) - self._y(x0))
        return x, y, math.atan2(ty, tx)


# --------------------------------------------------------------------------
# oriented-box separation


def boxes_overlap(a: ToothLayout, b: ToothLayout, inflate: float = 0.0) -> bool:
    """Separating-axis test for two oriented layout boxes.

    Each box is grown by ``inflate`` on every face before testing.
    """
    ra, rb = a.rotation(), b.rotation()
    ea = a.half_extents + inflate
    eb = b.half_extents + inflate
    cross = np.cross(ra.T[:, None, :], rb.T[None, :, :]).reshape(9, 3)
    norms = np.linalg.norm(cross, axis=1)
    axes = np.concatenate([ra.T, rb.T, cross[norms > 1e-9] / norms[norms > 1e-9, None]])
    d = b.center - a.center
    pa = np.abs(axes @ ra) @ ea
    pb = np.abs(axes @ rb) @ eb
    return not np.any(np.abs(axes @ d) > pa + pb)


# --------------------------------------------------------------------------
# sampling


def _layout_features(layout: ToothLayout) -> tuple:
    f = np.zeros(FEATURE_DIM)
    f[0:3] = np.array([layout.h, layout.w, layout.l]) / 10.0
    f[3:5] = math.sin(layout.k), math.cos(layout.k)
    f[5:7] = math.sin(layout.r), math.cos(layout.r)
    f[7] = layout.h * layout.w * layout.l / 1000.0
    return tuple(float(v) for v in f)


def _place_side(curve, extents, jitter, params, extra):
    """Layouts for positions 1..7 on the right half, in the right-hand frame."""
    out = []
    s = 0.5 * extents[0][1] + 0.5 * params.gap + params.margin + extra[0]
    for p in range(7):
        if p > 0:
            s += 0.5 * (extents[p - 1][1] + extents[p][1]) + params.gap + params.margin + extra[p]
        x, y, tang = curve.point(s)
        dx, dy, dz, dk, dr = jitter[p]
        h, w, l = extents[p]
        out.append(ToothLayout(x + dx, y + dy, dz, h, w, l, tang + dk, dr))
    return out


def _mirror(layout: ToothLayout) -> ToothLayout:
    return ToothLayout(-layout.x, layout.y, layout.z, layout.h, layout.w, layout.l, -layout.k, layout.r)


def _separate(curve, extents, jit_r, jit_l, params, max_iter=400):
    inflate = 0.5 * params.gap
    extra_r = [0.0] * 7
    extra_l = [0.0] * 7
    step = 0.05
    for _ in range(max_iter):
        right = _place_side(curve, extents, jit_r, params, extra_r)
        left_local = _place_side(curve, extents, jit_l, params, extra_l)
        if boxes_overlap(right[0], _mirror(left_local[0]), inflate):
            extra_r[0] += step
            extra_l[0] += step
            continue
        bumped = False
        for side, extra in ((right, extra_r), (left_local, extra_l)):
            for p in range(6):
                if boxes_overlap(side[p], side[p + 1], inflate):
                    extra[p + 1] += step
                    bumped = True
                    break
        if not bumped:
            return right, [_mirror(t) for t in left_local]
    raise GenerationError("extent priors cannot satisfy the non-overlap gap")


def sample_jaw(params: ArchParams = ArchParams(), seed: int = 0) -> JawGraph:
    """Sample a full 14-tooth jaw with every layout defined."""
    params.check()
    rng = np.random.default_rng(seed)
    curve = _ArchCurve(params)
    extents = []
    for p in range(1, 8):
        mean = np.asarray(params.extent_mean[p], dtype=float)
        e = mean + params.extent_sigma * rng.standard_normal(3)
        if np.any(e <= 0):
            raise GenerationError(f"non-positive extent drawn for position {p}")
        extents.append(tuple(float(v) for v in e))

    def draw_jitter():
        pos = params.position_jitter * rng.standard_normal((7, 3))
        ang = params.angle_jitter * rng.standard_normal((7, 2))
        return np.concatenate([pos, ang], axis=1)

    jit_r, jit_l = draw_jitter(), draw_jitter()
    right, left = _separate(curve, extents, jit_r, jit_l, params)

    qa, qb = (1, 2) if params.jaw_side == "upper" else (4, 3)
    by_code = {}
    for p in range(7):
        by_code[qa * 10 + p + 1] = right[p]
        by_code[qb * 10 + p + 1] = left[p]
    nodes = []
    for code in fdi_sequence(params.jaw_side, 7):
        lay = by_code[code]
        lay = ToothLayout(lay.x, lay.y, lay.z, lay.h, lay.w, lay.l, wrap_angle(lay.k), wrap_angle(lay.r))
        nodes.append(ToothNode(tooth_id=code, layout=lay, features=_layout_features(lay), missing=False))
    return make_graph(nodes, params.jaw_side)


def mask_missing(graph: JawGraph, tooth_ids) -> tuple:
    """Withhold layouts of ``tooth_ids``; returns (masked graph, {id: layout})."""
    tooth_ids = list(tooth_ids)
    if len(tooth_ids) > MAX_MISSING:
        raise ValueError(f"at most {MAX_MISSING} missing teeth supported")
    present = set(graph.tooth_ids)
    for t in tooth_ids:
        if t not in present:
            raise KeyError(f"unknown tooth_id {t}")
    truth = {}
    nodes = []
    for n in graph.nodes:
        if n.tooth_id in tooth_ids:
            truth[n.tooth_id] = n.layout
            nodes.append(ToothNode(tooth_id=n.tooth_id, layout=None, features=(0.0,) * FEATURE_DIM, missing=True))
        else:
            nodes.append(n)
    return graph.replace_nodes(nodes), truth


def sample_tooth_points(layout: ToothLayout, category: int, n: int, seed: int = 0,
                        jitter: float = 1.0, exponent: float = SUPERELLIPSOID_EXPONENT) -> np.ndarray:
    """``n`` points inside the superellipsoid inscribed in the layout box.

    Radii are stratified: the k-th point sits at normalized radius
    ``((k + jitter * u_k) / n) ** (1/3)``, so ``jitter=0`` puts the first point
    at the tooth center.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([int(seed), int(category)])
    u = rng.random(n)
    rho = ((np.arange(n) + jitter * u) / n) ** (1.0 / 3.0)
    d = rng.standard_normal((n, 3))
    pnorm = 2.0 / exponent
    norm = np.sum(np.abs(d) ** pnorm, axis=1) ** (1.0 / pnorm)
    norm[norm == 0] = 1.0
    local = (rho / norm)[:, None] * d * layout.half_extents
    return local @ layout.rotation().T + layout.center


def jaw_points(graph: JawGraph, n: int, seed: int = 0) -> dict:
    """Ground-truth point cloud per tooth with a defined layout."""
    return {
        node.tooth_id: sample_tooth_points(node.layout, node.tooth_id, n, seed=seed * 100 + node.tooth_id)
        for node in graph.nodes
        if node.layout is not None
    }


def adjacent_overlaps(graph: JawGraph, inflate: float = 0.0) -> list:
    """Arch-adjacent pairs of defined layouts whose boxes intersect."""
    order = arch_order(graph)
    bad = []
    for a, b in zip(order[:-1], order[1:]):
        la, lb = graph.nodes[a].layout, graph.nodes[b].layout
        if la is not None and lb is not None and boxes_overlap(la, lb, inflate):
            bad.append((graph.nodes[a].tooth_id, graph.nodes[b].tooth_id))
    return bad
