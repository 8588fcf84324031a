"""Acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line; the lines are collected in the
"acceptance criteria" section at the end of the pytest report.
"""
import math
import time

import numpy as np
import pytest
import torch

from conftest import front_camera, random_flat_scene, two_teeth_scenario
from dentoforge import jawgraph as jg
from dentoforge.collision import collision_grad, collision_loss, penetration_distance
from dentoforge.config import PipelineConfig
from dentoforge.distill import PerfectScore, ReferenceScore, optimize
from dentoforge.gsplat import SceneGaussians, init_from_layout, orbit_cameras, rasterize
from dentoforge.gsplat.gaussians import FIELDS, ToothGaussians
from dentoforge.gsplat.io import load_gaussians, save_gaussians
from dentoforge.gsplat.raster import render_backward_flat, render_flat
from dentoforge.gsplat.reference import render_bruteforce
from dentoforge.jawgraph import ToothLayout, mirror_fdi
from dentoforge.layoutdiffusion import (TOY_PROFILE, LayoutNorm, embed_text, forward_noise, graph_batch, make_model,
                                        make_schedule, sample_layout, train_layout)
from dentoforge.metrics import PSNR_CAP, chamfer, fscore, psnr
from dentoforge.pipeline import TOOTH_COLOR_DC, denoiser_config, reference_targets
from dentoforge.synthjaw import ArchParams, mask_missing, sample_jaw


# 1 ------------------------------------------------------------------------


def _three_teeth(rng, margin=1e-3):
    """Random anchor and neighbours with no center within ``margin`` of a hinge kink."""
    while True:
        anchor = rng.normal(0.0, 1.0, (rng.integers(4, 16), 3))
        left = rng.normal(0.0, 1.0, (rng.integers(4, 16), 3)) + [-1.5, 0.0, 0.0]
        right = rng.normal(0.0, 1.0, (rng.integers(4, 16), 3)) + [1.5, 0.0, 0.0]
        m = anchor.mean(axis=0)
        radius = np.mean(np.linalg.norm(anchor - m, axis=1))
        gaps = np.abs(radius - np.linalg.norm(np.concatenate([left, right]) - m, axis=1))
        if gaps.min() > margin and np.linalg.norm(anchor - m, axis=1).min() > margin and gaps.size:
            if collision_loss(anchor, left, right) > 0:
                return anchor, left, right


def test_collision_gradient_fidelity(verdict):
    rng = np.random.default_rng(2024)
    h = 1e-5
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        anchor, left, right = _three_teeth(rng)
        _, g_a, g_l, g_r = collision_grad(anchor, left, right)
        for arr, g in ((anchor, g_a), (left, g_l), (right, g_r)):
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                lp = collision_loss(anchor, left, right)
                arr[idx] = old - h
                lm = collision_loss(anchor, left, right)
                arr[idx] = old
                fd[idx] = (lp - lm) / (2 * h)
            scale = max(np.abs(g).max(), 1e-12)
            worst = max(worst, float(np.abs(fd - g).max() / scale))
    elapsed = time.perf_counter() - start
    verdict(1, "collision gradient vs central differences", worst < 1e-4 and elapsed < 5.0,
            f"max rel err {worst:.2e} (< 1e-4), {elapsed:.2f} s (< 5 s)")


# 2 ------------------------------------------------------------------------


def test_collision_hand_oracle(verdict):
    anchor = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    inside = collision_loss(anchor, np.array([[1.5, 0.0, 0.0]]))
    at_radius = collision_loss(anchor, np.array([[2.0, 0.0, 0.0]]))
    beyond = collision_loss(anchor, np.array([[3.7, 0.0, 0.0]]), np.array([[1.0, 0.0, 1.2]]))
    ok = abs(inside - 0.5) <= 1e-12 and at_radius == 0.0 and beyond == 0.0
    verdict(2, "collision hand oracle", ok,
            f"loss {inside!r} (0.5), at R {at_radius!r}, beyond R {beyond!r}")


# 3 ------------------------------------------------------------------------


def test_rasterizer_matches_bruteforce(verdict):
    start = time.perf_counter()
    cam = front_camera(32)
    worst_img = worst_part = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        p = random_flat_scene(rng, int(rng.integers(1, 65)))
        res = render_flat(p, cam)
        img, trans, weights = render_bruteforce(p, cam)
        worst_img = max(worst_img, float(np.abs(res.image - img).max()))
        worst_part = max(worst_part, float(np.abs(weights.sum(axis=-1) + trans - 1.0).max()))
        # the same partition from the tile renderer: white Gaussians over black
        white = dict(p, colors=np.full_like(p["colors"], 10.0))
        tiled = render_flat(white, cam, background=(0.0, 0.0, 0.0))
        worst_part = max(worst_part, float(np.abs(tiled.image[..., 0] + tiled.transmittance - 1.0).max()))
    elapsed = time.perf_counter() - start
    ok = worst_img <= 1e-5 and worst_part <= 1e-6 and elapsed < 30.0
    verdict(3, "tile rasterizer vs brute-force compositor", ok,
            f"max image diff {worst_img:.1e} (<= 1e-5), max |sum w + T - 1| {worst_part:.1e} (<= 1e-6), "
            f"{elapsed:.1f} s (< 30 s)")


# 4 ------------------------------------------------------------------------


def test_rendering_gradients(verdict):
    cam = front_camera(16)
    h = 1e-6
    worst = {f: 0.0 for f in FIELDS}
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        p = random_flat_scene(rng, 6, spread=0.6)
        w = rng.normal(size=(16, 16, 3))
        analytic = render_backward_flat(render_flat(p, cam), w)
        for f in FIELDS:
            arr = p[f]
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                lp = float(np.sum(w * render_flat(p, cam).image))
                arr[idx] = old - h
                lm = float(np.sum(w * render_flat(p, cam).image))
                arr[idx] = old
                fd[idx] = (lp - lm) / (2 * h)
            err = np.linalg.norm(analytic[f] - fd) / max(np.linalg.norm(fd), 1e-12)
            worst[f] = max(worst[f], float(err))
    ok = all(v < 1e-3 for v in worst.values())
    verdict(4, "rendering gradients vs finite differences", ok,
            ", ".join(f"{f} {v:.1e}" for f, v in worst.items()) + " (each < 1e-3)")


# 5 ------------------------------------------------------------------------


def test_diffusion_identities(verdict):
    rng = np.random.default_rng(5)
    notes = []
    ok = True
    for kind in ("cosine", "linear"):
        s = make_schedule(1000, kind)
        vp = float(np.abs(s.alpha ** 2 + s.sigma ** 2 - 1.0).max())
        good = s.alpha[0] == 1.0 and s.sigma[0] == 0.0 and vp <= 1e-12
        x0, eps = rng.normal(size=(4, 14, 8)), rng.normal(size=(4, 14, 8))
        eta = rng.integers(1, 1001, size=4)
        xt = forward_noise(x0, eta, eps, s)
        back = (xt - s.sigma[eta][:, None, None] * eps) / s.alpha[eta][:, None, None]
        trip = float(np.abs(back - x0).max())
        good = good and trip <= 1e-6
        ok = ok and good
        notes.append(f"{kind}: vp err {vp:.0e}, round trip {trip:.0e}")

    jaw = sample_jaw(ArchParams(), 0)
    norm = LayoutNorm.fit([jaw])
    masked, truth = mask_missing(jaw, [11, 16, 24])
    sched = make_schedule(1)
    ref = graph_batch([masked], [embed_text("x").vector], norm, targets=[truth])["x0"].double()

    def oracle(x_t, t, batch):
        return (x_t - sched.alpha[int(t[0])] * ref) / sched.sigma[int(t[0])]

    out = sample_layout(oracle, masked, schedule=sched, steps=1, norm=norm, clip=None, seed=1)
    inv = max(float(np.abs(out.nodes[out.index_of(t)].layout.as_array() - lay.as_array()).max())
              for t, lay in truth.items())
    ok = ok and inv <= 1e-6
    notes.append(f"T=1 oracle inversion err {inv:.0e}")
    verdict(5, "diffusion identities", ok, "; ".join(notes) + " (vp <= 1e-12, others <= 1e-6)")


# 6 ------------------------------------------------------------------------


def test_layout_sampling_contract(verdict):
    model = make_model(TOY_PROFILE, T=1000, norm=LayoutNorm.fit([sample_jaw(ArchParams(), s) for s in range(8)]),
                       seed=0)
    rng = np.random.default_rng(6)
    defined = observed = equivariant = True
    cases = 0
    for j in range(8):
        jaw = sample_jaw(ArchParams(), 500 + j)
        ids = [int(i) for i in rng.choice(jaw.tooth_ids, size=1 + j % 4, replace=False)]
        masked, _ = mask_missing(jaw, ids)
        out = sample_layout(model, masked, steps=50, seed=j)
        defined &= all(n.layout is not None and not n.missing for n in out.nodes) and jg.validate(out) == []
        observed &= all(a.layout == b.layout for a, b in zip(masked.nodes, out.nodes) if not a.missing)
        perm = rng.permutation(len(masked.nodes))
        shuffled = jg.make_graph([masked.nodes[i] for i in perm], masked.jaw_side)
        out2 = sample_layout(model, shuffled, steps=50, seed=j)
        equivariant &= all(out.nodes[out.index_of(t)].layout == out2.nodes[out2.index_of(t)].layout for t in ids)
        cases += 1
    verdict(6, "layout sampling contract", defined and observed and equivariant,
            f"{cases} masked jaws: all defined {defined}, observed bit-equal {observed}, "
            f"permutation-equivariant {equivariant}")


# 7 ------------------------------------------------------------------------


@pytest.mark.slow
def test_desk_scale_layout_quality(verdict):
    cfg = PipelineConfig()
    d = cfg.diffusion
    graphs = [sample_jaw(ArchParams(), seed=i) for i in range(d.train_jaws)]
    model = make_model(denoiser_config(cfg), d.T, d.schedule, norm=LayoutNorm.fit(graphs), seed=0)
    torch.set_num_threads(max(1, min(4, torch.get_num_threads())))
    start = time.perf_counter()
    train_layout(model, graphs, epochs=cfg.paper.layout_iterations, batch_size=d.batch_size, lr=d.lr,
                 lr_final=d.lr_final, seed=0, max_missing=d.max_missing)
    train_time = time.perf_counter() - start
    errs, sym = [], []
    for j in range(50):
        jaw = sample_jaw(ArchParams(), seed=10_000 + j)
        rng = np.random.default_rng(j)
        ids = [int(i) for i in rng.choice(jaw.tooth_ids, size=1 + j % 2, replace=False)]
        masked, truth = mask_missing(jaw, ids)
        out = sample_layout(model, masked, steps=d.sample_steps, seed=j)
        for tid, lay in truth.items():
            pred = out.nodes[out.index_of(tid)].layout
            mirror = out.nodes[out.index_of(mirror_fdi(tid))].layout
            errs.append(float(np.linalg.norm(pred.center - lay.center)))
            sym.append(abs(pred.x + mirror.x))
    center, mirror_err = float(np.mean(errs)), float(np.mean(sym))
    ok = center < 1.0 and mirror_err < 0.5 and train_time < 600.0
    verdict(7, "desk-scale layout quality", ok,
            f"center error {center:.3f} mm (< 1.0), mirror violation {mirror_err:.3f} mm (< 0.5), "
            f"training {train_time:.0f} s (< 600 s)")


# 8 ------------------------------------------------------------------------


@pytest.mark.slow
def test_two_teeth_collision_resolution(verdict):
    sc = two_teeth_scenario(shift=1.0, size=64, n_views=8, n=200)
    pd0 = penetration_distance(sc["scene"], [11, 21]).pd_mm
    start = time.perf_counter()
    res = optimize(sc["scene"], sc["layouts"], {"scene": sc["provider"], "instance": sc["provider"]}, sc["cameras"],
                   PipelineConfig(), seed=0, missing_ids=[11, 21], order=[11, 21])
    elapsed = time.perf_counter() - start
    pd1 = res.trace[-1]["pd_mm"]
    col0, col1 = res.trace[0]["collision_sum"], res.trace[-1]["collision_sum"]
    ok = pd0 >= 0.5 and pd1 <= 0.05 and len(res.trace) <= 400 and col1 <= 1e-3 * max(col0, 1e-12) \
        and elapsed < 300.0
    verdict(8, "two overlapping teeth separate", ok,
            f"PD {pd0:.3f} -> {pd1:.3f} mm (start >= 0.5, end <= 0.05) in {len(res.trace)} epochs, "
            f"collision_sum {col0:.3g} -> {col1:.3g}, {elapsed:.0f} s (< 300 s)")


# 9 ------------------------------------------------------------------------


def test_photometric_convergence(verdict):
    lay = ToothLayout(0.0, 0.0, 0.0, 10.0, 8.5, 7.0, 0.0, 0.0)
    truth = init_from_layout(lay, 150, seed=100, tooth_id=11)
    truth.colors[:] = TOOTH_COLOR_DC
    truth.opacity_logits[:] = 2.0
    cams = orbit_cameras([0.0, 0.0, 0.0], 10.0, n_views=4, width=48, height=48)
    targets = reference_targets(SceneGaussians([truth]), cams)
    renders = [targets[("scene", v)] for v in range(len(cams))]
    start_scene = SceneGaussians([init_from_layout(ToothLayout(0.5, 0, 0, 10.0, 8.5, 7.0, 0, 0), 150, seed=1,
                                                   tooth_id=11)])
    before = float(np.mean([psnr(rasterize(start_scene, c).image, r) for c, r in zip(cams, renders)]))
    cfg = PipelineConfig().with_overrides({"optimize": {"max_epochs": 100, "collision": False}})
    scene = start_scene.copy()
    optimize(scene, {11: lay}, {"scene": ReferenceScore(make_schedule(1000), targets)}, cams, cfg)
    after = float(np.mean([psnr(rasterize(scene, c).image, r) for c, r in zip(cams, renders)]))

    fixed = start_scene.copy()
    optimize(fixed, {11: lay}, {"scene": PerfectScore(make_schedule(1000))}, cams,
             cfg.with_overrides({"optimize.max_epochs": 20}), missing_ids=[11])
    drift = max(float(np.abs(getattr(a, f) - getattr(b, f)).max())
                for a, b in zip(fixed.teeth, start_scene.teeth) for f in FIELDS)
    ok = after - before >= 5.0 and drift < 1e-10
    verdict(9, "photometric convergence", ok,
            f"PSNR {before:.2f} -> {after:.2f} dB (gain >= 5), perfect-provider drift {drift:.1e} (< 1e-10)")


# 10 -----------------------------------------------------------------------


def test_paper_constants(verdict):
    cfg = PipelineConfig()
    p = cfg.paper
    paper_net = denoiser_config(cfg.with_overrides({"diffusion.profile": "paper"}))
    checks = {
        "lambda_instance": p.lambda_instance == 10.0,
        "lambda_scene": p.lambda_scene == 2.5,
        "lr_position": p.lr_position == 1.6e-4,
        "lr_opacity": p.lr_opacity == 5e-2,
        "lr_scale": p.lr_scale == 5e-3,
        "lr_rotation": p.lr_rotation == 1e-3,
        "color_decay_epoch": p.color_decay_epoch == 380,
        "sh_degree": p.sh_degree == 0,
        "dropout": p.dropout == 0.1 and paper_net.dropout == 0.1,
        "transformer": (paper_net.blocks, paper_net.heads, paper_net.width) == (5, 8, 512),
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(10, "default constants", not bad, f"{len(checks) - len(bad)}/{len(checks)} match" +
            (f", mismatched: {bad}" if bad else ""))


# 11 -----------------------------------------------------------------------


def test_format_round_trips(verdict, tmp_path):
    jaw = sample_jaw(ArchParams(), 11)
    text = jg.serialize(jaw)
    jaw_ok = jg.deserialize(text) == jaw and jg.serialize(jg.deserialize(text)) == text

    rng = np.random.default_rng(11)
    teeth = []
    for tid in (11, 12, 21):
        p = {k: v.astype(np.float32).astype(np.float64) for k, v in random_flat_scene(rng, 17).items()}
        teeth.append(ToothGaussians(tid, **p))
    scene = SceneGaussians(teeth)
    save_gaussians(tmp_path / "a.ply", scene)
    back = load_gaussians(tmp_path / "a.ply")
    save_gaussians(tmp_path / "b.ply", back)
    ply_ok = back.tooth_ids == scene.tooth_ids and all(
        np.array_equal(getattr(a, f), getattr(b, f)) for a, b in zip(scene.teeth, back.teeth) for f in FIELDS)
    ply_ok = ply_ok and (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()

    pts = rng.normal(size=(300, 3))
    img = rng.random((8, 8, 3))
    metric_ok = chamfer(pts, pts) == 0.0 and fscore(pts, pts) == 1.0 and psnr(img, img) == PSNR_CAP
    verdict(11, "format round trips and metric identities", jaw_ok and ply_ok and metric_ok,
            f"jaw JSON {jaw_ok}, Gaussian PLY {ply_ok}, CD/F/PSNR identities {metric_ok}")
