"""Score-distillation gradients for single teeth and whole scenes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..gsplat.gaussians import GaussianGrads, SceneGaussians, ToothGaussians
from ..gsplat.raster import RenderResult, rasterize, rasterize_backward
from .providers import Conditioning, ScoreProvider

WHITE = (1.0, 1.0, 1.0)


@dataclass
class SDSResult:
    grads: list              # GaussianGrads per tooth, scene order
    residual: float          # mean squared (eps_hat - eps), a monitoring quantity
    render: RenderResult


def _residual_grads(scene: SceneGaussians, cam, provider: ScoreProvider, cond: Conditioning, eta: int,
                    eps: np.ndarray, guidance: float, backend: Optional[str]) -> SDSResult:
    res = rasterize(scene, cam, WHITE, backend)
    z = provider.noisy_latent(res.image, eta, eps)
    eps_hat = provider.predict_noise(z, eta, cond)
    if eps_hat.shape != z.shape:
        raise ValueError(f"provider returned shape {eps_hat.shape}, expected {z.shape}")
    diff = eps_hat - eps
    grad_image = (guidance * provider.weight(eta)) * diff
    # the encoder is the identity, so d latent / d image needs no extra factor
    grads = rasterize_backward(res, grad_image) if len(scene) else []
    return SDSResult(grads, float(np.mean(diff * diff)), res)


def sds_grad_instance(tooth: ToothGaussians, cam, provider: ScoreProvider, text, eta: int, eps: np.ndarray,
                      rng=None, key=None, guidance: float = 1.0, backend: Optional[str] = None) -> SDSResult:
    """``guidance * w(eta) * (eps_hat - eps)`` pulled back through a render of the tooth alone."""
    cond = Conditioning(text=text, camera=cam, key=key)
    return _residual_grads(SceneGaussians([tooth]), cam, provider, cond, eta, eps, guidance, backend)


def sds_grad_scene(scene: SceneGaussians, cam, provider: ScoreProvider, text, layout_render, eta: int,
                   eps: np.ndarray, rng=None, key=None, guidance: float = 1.0,
                   backend: Optional[str] = None) -> SDSResult:
    """Scene-level counterpart conditioned on the layout silhouette."""
    cond = Conditioning(text=text, camera=cam, layout_render=layout_render, key=key)
    return _residual_grads(scene, cam, provider, cond, eta, eps, guidance, backend)


def total_loss(instance_losses, scene_loss: float, collision_losses, lambda_instance: float = 10.0,
               lambda_scene: float = 2.5) -> float:
    if lambda_instance < 0 or lambda_scene < 0:
        raise ValueError("loss weights must be non-negative")
    return (lambda_instance * float(np.sum(instance_losses)) + lambda_scene * float(scene_loss)
            + float(np.sum(collision_losses)))


def zero_grads(scene: SceneGaussians) -> list:
    return [GaussianGrads.zeros_like(t) for t in scene.teeth]
