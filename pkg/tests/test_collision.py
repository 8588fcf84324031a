import json

import numpy as np
import pytest

from dentoforge import collision as col
from dentoforge.distill.optimizer import tooth_collision_grad

ANCHOR = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])


def test_hand_case():
    assert col.collision_loss(ANCHOR, np.array([[1.5, 0.0, 0.0]])) == pytest.approx(0.5, abs=1e-12)
    assert col.collision_loss(ANCHOR, np.array([[2.0, 0.0, 0.0]])) == 0.0
    assert col.collision_loss(ANCHOR, np.array([[3.5, 0.0, 0.0]])) == 0.0


def test_hand_case_gradient():
    _, g_a, g_l, g_r = col.collision_grad(ANCHOR, np.array([[1.5, 0.0, 0.0]]))
    assert g_r is None
    np.testing.assert_allclose(g_l, [[-1.0, 0.0, 0.0]], atol=1e-12)
    # d/d anchor: centroid pull (-1/2 each) plus radius term (+-1/2)
    np.testing.assert_allclose(g_a, [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], atol=1e-12)


def test_no_neighbors_is_zero():
    assert col.collision_loss(ANCHOR) == 0.0
    loss, g_a, g_l, g_r = col.collision_grad(ANCHOR)
    assert loss == 0.0 and not g_a.any() and g_l is None and g_r is None


def test_intravariance():
    assert col.intravariance(ANCHOR) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        col.centroid(np.zeros((0, 3)))


def _fd_check(rng):
    a = rng.normal(0.0, 1.0, (12, 3))
    left = rng.normal(0.0, 1.0, (9, 3)) + [-1.2, 0, 0]
    right = rng.normal(0.0, 1.0, (7, 3)) + [1.2, 0, 0]
    _, g_a, g_l, g_r = col.collision_grad(a, left, right)
    h = 1e-5
    worst = 0.0
    for arr, g in ((a, g_a), (left, g_l), (right, g_r)):
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = col.collision_loss(a, left, right)
            arr[idx] = old - h
            lm = col.collision_loss(a, left, right)
            arr[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        worst = max(worst, np.max(np.abs(fd - g)) / max(np.max(np.abs(fd)), 1e-8))
    return worst


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    assert _fd_check(rng) < 1e-4


def test_numba_matches_numpy(monkeypatch):
    rng = np.random.default_rng(9)
    a, b, c = rng.normal(size=(20, 3)), rng.normal(size=(15, 3)), rng.normal(size=(11, 3))
    ref = col.collision_grad(a, b, c)
    monkeypatch.setattr(col._accel, "USE_NUMBA", not col._accel.USE_NUMBA)
    other = col.collision_grad(a, b, c)
    assert ref[0] == pytest.approx(other[0], abs=1e-12)
    for x, y in zip(ref[1:], other[1:]):
        np.testing.assert_allclose(x, y, atol=1e-12)


def test_penetration_distance_and_report_round_trip():
    pts = {1: ANCHOR, 2: np.array([[1.5, 0.0, 0.0], [4.0, 0.0, 0.0]]), 3: np.array([[20.0, 0.0, 0.0]])}
    rep = col.penetration_distance(pts, order=[1, 2, 3])
    assert rep.pairs[0][2] == pytest.approx(0.5)
    assert rep.pairs[1][2] == 0.0
    assert rep.pd_mm == pytest.approx(0.25)
    assert col.CollisionReport.from_json(rep.to_json()) == rep
    json.loads(rep.to_json())


def test_line_search_along_gradient_decreases_loss():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(30, 3))
    nb = rng.normal(size=(30, 3)) + [0.8, 0, 0]
    loss, _, g, _ = col.collision_grad(a, nb)
    assert loss > 0
    assert col.collision_loss(a, nb - 1e-3 * g) < loss


def test_tooth_gradient_is_whole_scene_gradient():
    rng = np.random.default_rng(4)
    order = [1, 2, 3, 4]
    pts = {t: rng.normal(size=(6, 3)) + [1.3 * i, 0, 0] for i, t in enumerate(order)}

    def scene_sum():
        total = 0.0
        for i, t in enumerate(order):
            left = pts[order[i - 1]] if i else None
            right = pts[order[i + 1]] if i + 1 < len(order) else None
            total += col.collision_loss(pts[t], left, right)
        return total

    assert scene_sum() > 0
    for tid in order:
        g = tooth_collision_grad(order, tid, pts)
        fd = np.zeros_like(g)
        for idx in np.ndindex(g.shape):
            old = pts[tid][idx]
            pts[tid][idx] = old + 1e-6
            lp = scene_sum()
            pts[tid][idx] = old - 1e-6
            lm = scene_sum()
            pts[tid][idx] = old
            fd[idx] = (lp - lm) / 2e-6
        np.testing.assert_allclose(g, fd, atol=1e-6)
