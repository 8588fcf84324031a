import numpy as np
import pytest

from dentoforge.gsplat.camera import look_at
from dentoforge.jawgraph import ToothLayout, ToothNode, make_graph
from dentoforge.synthjaw import ArchParams, sample_jaw


def random_flat_scene(rng, n, spread=1.0, depth=6.0):
    """Random Gaussians in front of a camera at the origin looking down +z."""
    q = rng.normal(size=(n, 4))
    return {
        "means": np.column_stack([rng.uniform(-spread, spread, (n, 2)), rng.uniform(depth - 1, depth + 1, n)]),
        "log_scales": rng.uniform(-2.0, -0.8, (n, 3)),
        "quats": q / np.linalg.norm(q, axis=1, keepdims=True),
        "opacity_logits": rng.uniform(-1.5, 2.0, n),
        "colors": rng.normal(0.0, 1.0, (n, 3)),
    }


def front_camera(size=32, fov=40.0):
    return look_at((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), up=(0.0, -1.0, 0.0), width=size, height=size, fov_deg=fov)


@pytest.fixture
def jaw():
    return sample_jaw(ArchParams(), seed=3)


@pytest.fixture
def small_graph():
    lay = ToothLayout(0.0, 0.0, 0.0, 9.0, 8.0, 7.0, 0.1, -0.2)
    nodes = [ToothNode(11, lay), ToothNode(21, None, missing=True), ToothNode(12, lay)]
    return make_graph(nodes, "upper")


def two_teeth_scenario(shift=1.0, size=64, n_views=8, n=200):
    """Two central incisors pushed ``shift`` mm into each other, with reference renders of the true pose."""
    from dentoforge.distill import ReferenceScore
    from dentoforge.gsplat import SceneGaussians, init_from_layout, orbit_cameras
    from dentoforge.layoutdiffusion import make_schedule
    from dentoforge.pipeline import reference_targets

    truth_lay = {11: ToothLayout(-4.3, 0, 0, 10, 8.5, 7, 0, 0), 21: ToothLayout(4.3, 0, 0, 10, 8.5, 7, 0, 0)}
    init_lay = {11: ToothLayout(-4.3 + shift, 0, 0, 10, 8.5, 7, 0, 0),
                21: ToothLayout(4.3 - shift, 0, 0, 10, 8.5, 7, 0, 0)}
    truth = SceneGaussians([init_from_layout(truth_lay[t], n, seed=100 + t, tooth_id=t) for t in (11, 21)])
    scene = SceneGaussians([init_from_layout(init_lay[t], n, seed=t, tooth_id=t) for t in (11, 21)])
    cams = orbit_cameras([0.0, 0.0, 0.0], 17.0, n_views=n_views, width=size, height=size)
    targets = reference_targets(truth, cams, instance_ids=(11, 21))
    provider = ReferenceScore(make_schedule(1000), targets)
    return {"scene": scene, "layouts": init_lay, "truth": truth, "cameras": cams, "targets": targets,
            "provider": provider}


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
