"""Score providers: noise predictors for rendered images.

A provider owns the (identity) encoder, the formation of the noisy latent,
the noise prediction and the timestep weighting. Conditioning carries the
text embedding, the camera, an optional layout silhouette and a key naming
the target (view index, optionally tooth id).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Optional

import numpy as np

from ..layoutdiffusion.schedule import NoiseSchedule


@dataclass(frozen=True)
class Conditioning:
    text: Optional[np.ndarray] = None
    camera: object = None
    layout_render: Optional[np.ndarray] = None
    key: Hashable = None


class ScoreProvider:
    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule

    def encode(self, image: np.ndarray) -> np.ndarray:
        return image

    def noisy_latent(self, image: np.ndarray, eta: int, eps: np.ndarray) -> np.ndarray:
        z = self.encode(image)
        if z.shape != eps.shape:
            raise ValueError(f"noise shape {eps.shape} does not match latent shape {z.shape}")
        return self.schedule.alpha[eta] * z + self.schedule.sigma[eta] * eps

    def predict_noise(self, z: np.ndarray, eta: int, cond: Conditioning) -> np.ndarray:
        raise NotImplementedError

    def weight(self, eta: int) -> float:
        return float(self.schedule.sigma[eta] ** 2)


class ReferenceScore(ScoreProvider):
    """Predicts the noise that would turn ``targets[cond.key]`` into ``z``.

    Then ``eps_hat - eps = (alpha / sigma) * (image - target)``, so score
    distillation against it is a scaled photometric fit.
    """

    def __init__(self, schedule: NoiseSchedule, targets: dict):
        super().__init__(schedule)
        self.targets = {k: np.asarray(v, dtype=float) for k, v in targets.items()}

    def target(self, key) -> np.ndarray:
        try:
            return self.targets[key]
        except KeyError:
            raise KeyError(f"no reference image for {key!r}") from None

    def predict_noise(self, z, eta, cond):
        tgt = self.encode(self.target(cond.key))
        if tgt.shape != z.shape:
            raise ValueError(f"reference {cond.key!r} has shape {tgt.shape}, latent has {z.shape}")
        return (z - self.schedule.alpha[eta] * tgt) / self.schedule.sigma[eta]


class PerfectScore(ScoreProvider):
    """Returns exactly the noise used to form the last latent."""

    def __init__(self, schedule: NoiseSchedule):
        super().__init__(schedule)
        self._eps = None

    def noisy_latent(self, image, eta, eps):
        z = super().noisy_latent(image, eta, eps)
        self._eps = eps
        return z

    def predict_noise(self, z, eta, cond):
        if self._eps is None or self._eps.shape != z.shape:
            raise ValueError("PerfectScore.predict_noise called without a matching noisy_latent")
        return self._eps


class LearnedScore(ScoreProvider):
    """Small convolutional noise predictor with a layout-silhouette channel."""

    def __init__(self, schedule: NoiseSchedule, net=None, channels: int = 32, seed: int = 0):
        super().__init__(schedule)
        import torch

        from .learned import ConvDenoiser

        if net is None:
            torch.manual_seed(seed)
            net = ConvDenoiser(channels)
        self.net = net.double().eval()

    def predict_noise(self, z, eta, cond):
        import torch

        h, w = z.shape[:2]
        layout = cond.layout_render if cond.layout_render is not None else np.zeros((h, w))
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(z.transpose(2, 0, 1)))[None]
            lay = torch.from_numpy(np.asarray(layout, dtype=float))[None, None]
            t = torch.tensor([eta / self.schedule.T], dtype=torch.float64)
            out = self.net(x, lay, t)[0].numpy().transpose(1, 2, 0)
        return np.ascontiguousarray(out)


def sample_eta(rng: np.random.Generator, T: int, lo_frac: float = 0.02, hi_frac: float = 0.98) -> int:
    lo = max(1, int(math.ceil(lo_frac * T)))
    hi = max(lo, int(math.floor(hi_frac * T)))
    return int(rng.integers(lo, hi + 1))
