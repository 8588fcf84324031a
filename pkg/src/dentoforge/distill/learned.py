"""Training of the convolutional noise predictor behind :class:`LearnedScore`."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..layoutdiffusion.schedule import NoiseSchedule


class ConvDenoiser(nn.Module):
    """Input: noisy RGB, layout silhouette and a broadcast timestep plane."""

    def __init__(self, channels: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(5, channels, 3, padding=1), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1), nn.SiLU(),
            nn.Conv2d(channels, 3, 3, padding=1),
        )

    def forward(self, z, layout, t):
        b, _, h, w = z.shape
        tplane = t.to(z.dtype)[:, None, None, None].expand(b, 1, h, w)
        return self.body(torch.cat([z, layout.to(z.dtype), tplane], dim=1))


def train_conv_denoiser(images: np.ndarray, layouts: np.ndarray, schedule: NoiseSchedule, epochs: int = 50,
                        batch_size: int = 8, lr: float = 2e-3, channels: int = 32, seed: int = 0):
    """Fit on (N, H, W, 3) renders and (N, H, W) silhouettes; returns (net, loss history)."""
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    net = ConvDenoiser(channels).double()
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    x0 = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=float))
    lay = torch.from_numpy(np.asarray(layouts, dtype=float))[:, None]
    alpha = torch.tensor(schedule.alpha)
    sigma = torch.tensor(schedule.sigma)
    history = []
    n = x0.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for s in range(0, n, batch_size):
            idx = torch.from_numpy(perm[s:s + batch_size])
            eta = torch.from_numpy(rng.integers(1, schedule.T + 1, size=len(idx)))
            eps = torch.from_numpy(rng.standard_normal(tuple(x0[idx].shape)))
            z = alpha[eta][:, None, None, None] * x0[idx] + sigma[eta][:, None, None, None] * eps
            loss = torch.mean((net(z, lay[idx], eta.double() / schedule.T) - eps) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
    net.eval()
    return net, history
