"""Alternating scene / instance optimization of per-tooth Gaussians."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..collision import collision_grad, collision_loss, penetration_distance
from ..config import PaperConstants, PipelineConfig
from ..gsplat.gaussians import FIELDS, GaussianGrads, SceneGaussians, ToothGaussians, layout_from_gaussians, normalize_quats
from ..gsplat.silhouette import render_layouts
from ..metrics import psnr
from .providers import ScoreProvider, sample_eta
from .sds import sds_grad_instance, sds_grad_scene, total_loss

GROUP_OF_FIELD = {
    "means": "position", "log_scales": "scale", "quats": "rotation", "opacity_logits": "opacity", "colors": "color",
}


class OptimizationError(FloatingPointError):
    pass


@dataclass
class OptimState:
    """Adam moments per tooth and field, with per-group learning rates."""

    lrs: dict
    color_lr_final: float
    color_decay_epoch: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    moments: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)
    epoch: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=10))

    @classmethod
    def from_constants(cls, constants: PaperConstants, spatial_scale: float = 1.0) -> "OptimState":
        lrs = {
            "position": constants.lr_position * spatial_scale,
            "opacity": constants.lr_opacity,
            "scale": constants.lr_scale,
            "rotation": constants.lr_rotation,
            "color": constants.lr_color,
        }
        return cls(lrs=lrs, color_lr_final=constants.lr_color_final, color_decay_epoch=constants.color_decay_epoch,
                   history=deque(maxlen=constants.stop_window))

    def lr(self, group: str, epoch: int) -> float:
        if group == "color" and epoch >= self.color_decay_epoch:
            return self.color_lr_final
        return self.lrs[group]

    def step(self, tooth: ToothGaussians, grads: GaussianGrads, epoch: int) -> None:
        mom = self.moments.setdefault(tooth.tooth_id, {})
        t = self.steps.get(tooth.tooth_id, 0) + 1
        self.steps[tooth.tooth_id] = t
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for f in FIELDS:
            g = getattr(grads, f)
            m, v = mom.get(f, (np.zeros_like(g), np.zeros_like(g)))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            mom[f] = (m, v)
            update = self.lr(GROUP_OF_FIELD[f], epoch) * (m / c1) / (np.sqrt(v / c2) + self.eps)
            setattr(tooth, f, getattr(tooth, f) - update)
        normalize_quats(tooth)


@dataclass
class OptimizeResult:
    scene: SceneGaussians
    layouts: dict
    trace: list
    stop_reason: str


def scene_extent(scene: SceneGaussians) -> float:
    pts = scene.flat()["means"]
    if pts.shape[0] == 0:
        return 1.0
    return float(np.max(pts.max(axis=0) - pts.min(axis=0))) or 1.0


def _finite(value: float, term: str, epoch: int) -> float:
    if not math.isfinite(value):
        raise OptimizationError(f"non-finite {term} at epoch {epoch}")
    return value


def _neighbors(order: list, tid: int, snapshot: dict):
    i = order.index(tid)
    left = snapshot[order[i - 1]] if i > 0 else None
    right = snapshot[order[i + 1]] if i + 1 < len(order) else None
    return left, right


def tooth_collision_grad(order: list, tid: int, points: dict) -> np.ndarray:
    """Gradient of the whole-scene collision sum with respect to one tooth's centers.

    Collects the tooth's own anchor term and the terms where it is the left
    or right neighbor of an adjacent anchor. ``points`` maps id to centers.
    """
    i = order.index(tid)
    at = lambda j: points[order[j]] if 0 <= j < len(order) else None  # noqa: E731
    _, g, _, _ = collision_grad(at(i), at(i - 1), at(i + 1))
    if i > 0:
        _, _, _, g_right = collision_grad(at(i - 1), at(i - 2), at(i))
        g = g + g_right
    if i + 1 < len(order):
        _, _, g_left, _ = collision_grad(at(i + 1), at(i), at(i + 2))
        g = g + g_left
    return g


def relative_variation(window: Sequence[float]) -> float:
    lo, hi = min(window), max(window)
    if hi == lo:
        return 0.0
    scale = abs(float(np.mean(window)))
    return (hi - lo) / scale if scale > 0 else math.inf


def optimize(scene: SceneGaussians, layouts: dict, providers: dict, cameras: Sequence, config: PipelineConfig,
             seed: int = 0, missing_ids: Sequence[int] = (), order: Optional[Sequence[int]] = None,
             scene_text=None, instance_text: Optional[dict] = None, eval_targets: Optional[Sequence] = None,
             trace_path=None, backend: Optional[str] = None,
             callback: Optional[Callable] = None) -> OptimizeResult:
    """Run the alternating optimization in place on ``scene``.

    Each epoch: a scene pass (one update of every Gaussian per camera), an
    instance pass (per missing tooth and camera, weighted instance SDS plus
    the gradient of the scene's collision sum with respect to that tooth,
    neighbors frozen at their pre-pass positions), then a layout refresh. ``providers`` maps ``"scene"`` and
    ``"instance"`` to score providers; reference targets are keyed
    ``("scene", view)`` and ``(tooth_id, view)``. Stops when the total loss
    varies by less than the configured relative tolerance over the window,
    or at the epoch cap.
    """
    if not cameras:
        raise ValueError("optimize needs at least one camera")
    constants, oc = config.paper, config.optimize
    order = list(order) if order is not None else scene.tooth_ids
    missing = [t for t in order if t in set(missing_ids)]
    instance_text = instance_text or {}
    prov_scene: ScoreProvider = providers["scene"]
    prov_inst: ScoreProvider = providers.get("instance", prov_scene)
    spatial = oc.spatial_lr_scale if oc.spatial_lr_scale is not None else scene_extent(scene)
    state = OptimState.from_constants(constants, spatial)
    rng = np.random.default_rng(seed)
    layouts = dict(layouts)
    trace = []
    stop_reason = "max_epochs"
    scene_guidance = constants.lambda_scene * constants.guidance_scene
    inst_guidance = constants.lambda_instance * constants.guidance_instance
    trace_fh = open(trace_path, "w", encoding="utf-8") if trace_path is not None else None
    try:
        for epoch in range(oc.max_epochs):
            # scene pass
            scene_res, psnrs = [], []
            for v, cam in enumerate(cameras):
                eta = sample_eta(rng, prov_scene.schedule.T, oc.eta_min_frac, oc.eta_max_frac)
                eps = rng.standard_normal((cam.height, cam.width, 3))
                silhouette = render_layouts([layouts.get(t) for t in order], cam)
                r = sds_grad_scene(scene, cam, prov_scene, scene_text, silhouette, eta, eps, key=("scene", v),
                                   guidance=scene_guidance, backend=backend)
                scene_res.append(_finite(r.residual, "scene SDS residual", epoch))
                if eval_targets is not None:
                    psnrs.append(psnr(r.render.image, eval_targets[v]))
                for tooth, g in zip(scene.teeth, r.grads):
                    if oc.freeze_present and tooth.tooth_id not in missing:
                        continue
                    state.step(tooth, g, epoch)
            sds_scene = _finite(float(np.mean(scene_res)), "scene SDS residual", epoch)

            # instance pass
            snapshot = {t.tooth_id: t.means.copy() for t in scene.teeth}
            inst_sum = 0.0
            for tid in missing:
                tooth = scene.tooth(tid)
                vals = []
                for v, cam in enumerate(cameras):
                    eta = sample_eta(rng, prov_inst.schedule.T, oc.eta_min_frac, oc.eta_max_frac)
                    eps = rng.standard_normal((cam.height, cam.width, 3))
                    r = sds_grad_instance(tooth, cam, prov_inst, instance_text.get(tid), eta, eps, key=(tid, v),
                                          guidance=inst_guidance, backend=backend)
                    vals.append(_finite(r.residual, f"instance SDS residual (tooth {tid})", epoch))
                    g = r.grads[0]
                    if oc.collision:
                        g.means = g.means + tooth_collision_grad(order, tid, {**snapshot, tid: tooth.means})
                    state.step(tooth, g, epoch)
                inst_sum += _finite(float(np.mean(vals)), f"instance SDS residual (tooth {tid})", epoch)

            # collision monitoring on the updated scene
            current = {t.tooth_id: t.means for t in scene.teeth}
            col_sum = 0.0
            for tid in order:
                left, right = _neighbors(order, tid, current)
                col_sum += collision_loss(current[tid], left, right)
            col_sum = _finite(col_sum, "collision loss", epoch)

            if oc.refresh_layout:
                for tooth in scene.teeth:
                    tooth.layout = layout_from_gaussians(tooth)
                    layouts[tooth.tooth_id] = tooth.layout

            total = _finite(total_loss([inst_sum], sds_scene, [col_sum], constants.lambda_instance, constants.lambda_scene),
                            "total loss", epoch)
            pd = penetration_distance(scene, order).pd_mm if len(scene) > 1 else 0.0
            rec = {
                "epoch": epoch,
                "total_loss": total,
                "sds_scene": sds_scene,
                "sds_instance_sum": inst_sum,
                "collision_sum": col_sum,
                "pd_mm": pd,
                "psnr_db": float(np.mean(psnrs)) if psnrs else None,
            }
            trace.append(rec)
            if trace_fh is not None:
                trace_fh.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(rec)
            state.epoch = epoch + 1
            state.history.append(total)
            if len(state.history) == state.history.maxlen and relative_variation(state.history) < oc.stop_rel_tol:
                stop_reason = "converged"
                break
    finally:
        if trace_fh is not None:
            trace_fh.close()
    return OptimizeResult(scene, layouts, trace, stop_reason)
