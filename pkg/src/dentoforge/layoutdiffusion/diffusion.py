"""Conditional Gaussian diffusion over the layouts of a jaw graph."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch

from ..jawgraph import (
    FEATURE_DIM,
    RELATIONS,
    JawGraph,
    ToothLayout,
    ToothNode,
    arch_order,
    category_index,
    wrap_angle,
)
from .denoiser import LAYOUT_DIM, DenoiserConfig, GraphDenoiser
from .schedule import NoiseSchedule, make_schedule, sampling_timesteps
from .text import TextEmbedding, embed_text, jaw_prompt

MIN_EXTENT = 0.5
X0_CLIP = 5.0


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayoutNorm:
    """Per-channel affine map of layouts to zero mean, unit variance."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls) -> "LayoutNorm":
        return cls(np.zeros(LAYOUT_DIM), np.ones(LAYOUT_DIM))

    @classmethod
    def fit(cls, graphs: Sequence[JawGraph]) -> "LayoutNorm":
        rows = [n.layout.as_array() for g in graphs for n in g.nodes if n.layout is not None]
        if not rows:
            raise ValueError("no defined layouts to fit normalization")
        arr = np.array(rows)
        std = arr.std(axis=0)
        std[std < 1e-6] = 1.0
        return cls(arr.mean(axis=0), std)

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, x):
        return x * self.std + self.mean


@dataclass
class LayoutModel:
    denoiser: GraphDenoiser
    schedule: NoiseSchedule
    norm: LayoutNorm


# --------------------------------------------------------------------------
# tensors


def graph_batch(graphs: Sequence[JawGraph], text: Sequence[np.ndarray], norm: LayoutNorm,
                targets: Optional[Sequence[dict]] = None, canonical: bool = True) -> dict:
    """Pack graphs into padded tensors.

    With ``canonical`` the nodes of each graph are put in arch order; the
    permutation is returned under ``"order"`` so results can be mapped back.
    ``targets`` optionally supplies the withheld layouts of missing nodes.
    """
    b = len(graphs)
    n = max(len(g.nodes) for g in graphs)
    cats = np.zeros((b, n), dtype=np.int64)
    x0 = np.zeros((b, n, LAYOUT_DIM))
    source = np.zeros((b, n, LAYOUT_DIM))
    known = np.zeros((b, n), dtype=bool)
    has_target = np.zeros((b, n), dtype=bool)
    node_mask = np.zeros((b, n), dtype=bool)
    feats = np.zeros((b, n, FEATURE_DIM))
    adj = np.zeros((b, len(RELATIONS), n, n))
    orders = []
    rel_idx = {r: i for i, r in enumerate(RELATIONS)}
    for gi, g in enumerate(graphs):
        order = arch_order(g) if canonical else list(range(len(g.nodes)))
        orders.append(order)
        slot = {node_i: s for s, node_i in enumerate(order)}
        tgt = targets[gi] if targets is not None else {}
        for s, node_i in enumerate(order):
            node = g.nodes[node_i]
            cats[gi, s] = category_index(node.tooth_id)
            node_mask[gi, s] = True
            feats[gi, s] = node.features
            if node.layout is not None and not node.missing:
                known[gi, s] = True
                source[gi, s] = norm.apply(node.layout.as_array())
                x0[gi, s] = source[gi, s]
                has_target[gi, s] = True
            elif node.tooth_id in tgt:
                x0[gi, s] = norm.apply(tgt[node.tooth_id].as_array())
                has_target[gi, s] = True
        for e in g.edges:
            a, c = slot[e.src], slot[e.dst]
            adj[gi, rel_idx[e.relation], a, c] = 1.0
            adj[gi, rel_idx[e.relation], c, a] = 1.0
    text = np.stack([np.asarray(t, dtype=float) for t in text])
    return {
        "categories": torch.from_numpy(cats),
        "x0": torch.from_numpy(x0),
        "source": torch.from_numpy(source),
        "known": torch.from_numpy(known),
        "has_target": torch.from_numpy(has_target),
        "node_mask": torch.from_numpy(node_mask),
        "features": torch.from_numpy(feats),
        "adj": torch.from_numpy(adj),
        "text": torch.from_numpy(text),
        "order": orders,
    }


def forward_noise(x0, eta, eps, schedule: NoiseSchedule, noised=None):
    """``alpha[eta] * x0 + sigma[eta] * eps`` on noised nodes; others pass through.

    ``x0``/``eps`` are (..., N, 8); ``eta`` is an int or a per-batch array;
    ``noised`` is an optional (..., N) boolean mask (default: all nodes).
    """
    is_torch = isinstance(x0, torch.Tensor)
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError(f"shape mismatch: layouts {tuple(x0.shape)} vs noise {tuple(eps.shape)}")
    lib = torch if is_torch else np
    eta_arr = np.asarray(eta)
    a = schedule.alpha[eta_arr]
    s = schedule.sigma[eta_arr]
    if is_torch:
        a = torch.as_tensor(a, dtype=x0.dtype)
        s = torch.as_tensor(s, dtype=x0.dtype)
    # broadcast per-batch scales over (N, 8)
    extra = x0.ndim - (a.ndim if hasattr(a, "ndim") else 0)
    a = a.reshape(tuple(a.shape) + (1,) * extra)
    s = s.reshape(tuple(s.shape) + (1,) * extra)
    xt = a * x0 + s * eps
    if noised is None:
        return xt
    m = noised[..., None]
    return lib.where(m, xt, x0)


def diffusion_loss(denoiser: Callable, batch: dict, schedule: NoiseSchedule, eta, eps) -> torch.Tensor:
    """Noise-prediction MSE over the layout channels of nodes not observed."""
    target_nodes = (~batch["known"]) & batch["has_target"] & batch["node_mask"]
    x0 = batch["x0"]
    xt = forward_noise(x0, eta, eps, schedule, noised=target_nodes)
    pred = denoiser(xt, torch.as_tensor(np.asarray(eta)).reshape(-1), batch)
    diff = (pred.to(eps.dtype) - eps) ** 2
    w = target_nodes[..., None].to(eps.dtype)
    denom = w.sum() * LAYOUT_DIM
    if denom.item() == 0:
        return (diff * 0.0).sum()
    return (diff * w).sum() / denom


def train_step(denoiser, batch: dict, schedule: NoiseSchedule, rng: np.random.Generator,
               sample_ids: Optional[Sequence] = None) -> float:
    """One stochastic loss evaluation with gradients left in ``.grad``."""
    b = batch["x0"].shape[0]
    eta = rng.integers(1, schedule.T + 1, size=b)
    eps = torch.from_numpy(rng.standard_normal(tuple(batch["x0"].shape))).to(batch["x0"].dtype)
    loss = diffusion_loss(denoiser, batch, schedule, eta, eps)
    if not torch.isfinite(loss):
        per = [float(v) for v in batch["x0"].reshape(b, -1).abs().amax(dim=1)]
        bad = next((i for i, v in enumerate(per) if not math.isfinite(v)), 0)
        sid = sample_ids[bad] if sample_ids is not None else bad
        raise NumericError(f"non-finite diffusion loss (sample {sid})")
    loss.backward()
    return float(loss.detach())


# --------------------------------------------------------------------------
# diagnostics


def posterior(schedule: NoiseSchedule, t: int, s: int):
    """Coefficients of q(x_s | x_t, x_0): (coef_xt, coef_x0, variance)."""
    at, st = schedule.alpha[t], schedule.sigma[t]
    as_, ss = schedule.alpha[s], schedule.sigma[s]
    a_ts = at / as_
    s2_ts = st * st - a_ts * a_ts * ss * ss
    coef_xt = a_ts * ss * ss / (st * st)
    coef_x0 = as_ * s2_ts / (st * st)
    var = s2_ts * ss * ss / (st * st)
    return coef_xt, coef_x0, var


def vlb_terms(denoiser, batch: dict, schedule: NoiseSchedule, rng: np.random.Generator) -> dict:
    """Per-step KL diagnostics of the reverse process for the batch's missing nodes.

    Returns ``{eta: mean KL}`` for every eta in 2..T (single-step posteriors)
    and the decoder negative log-likelihood at eta = 1 under variance
    ``sigma[1]**2``. For large T callers should subsample.
    """
    target_nodes = (~batch["known"]) & batch["has_target"] & batch["node_mask"]
    w = target_nodes[..., None].double()
    x0 = batch["x0"].double()
    out = {}
    with torch.no_grad():
        for eta in range(1, schedule.T + 1):
            eps = torch.from_numpy(rng.standard_normal(tuple(x0.shape)))
            xt = forward_noise(x0, eta, eps, schedule, noised=target_nodes)
            etas = torch.full((x0.shape[0],), eta)
            eps_hat = denoiser(xt, etas, batch).double()
            x0_hat = (xt - schedule.sigma[eta] * eps_hat) / schedule.alpha[eta]
            if eta == 1:
                var = schedule.sigma[1] ** 2 / schedule.alpha[1] ** 2
                nll = 0.5 * ((x0 - x0_hat) ** 2 / var + math.log(2 * math.pi * var))
                out["nll0"] = float((nll * w).sum() / w.sum().clamp(min=1))
                continue
            cxt, cx0, var = posterior(schedule, eta, eta - 1)
            mu_q = cxt * xt + cx0 * x0
            mu_p = cxt * xt + cx0 * x0_hat
            kl = (mu_q - mu_p) ** 2 / (2 * var)
            out[eta] = float((kl * w).sum() / w.sum().clamp(min=1))
    return out


# --------------------------------------------------------------------------
# sampling


def _as_embedding(prompt) -> np.ndarray:
    if isinstance(prompt, TextEmbedding):
        return prompt.vector
    if isinstance(prompt, str):
        return embed_text(prompt).vector
    return np.asarray(prompt, dtype=float)


def sample_layout(model: Union[LayoutModel, Callable], graph: JawGraph, prompt=None,
                  schedule: Optional[NoiseSchedule] = None, steps: int = 50, seed: int = 0,
                  norm: Optional[LayoutNorm] = None, clip: Optional[float] = X0_CLIP) -> JawGraph:
    """Fill in the layouts of missing teeth by reverse diffusion.

    ``model`` is a :class:`LayoutModel` or a bare callable
    ``eps_hat = f(x_t, eta, batch)`` on normalized (1, N, 8) tensors. Observed
    layouts are clamped every step and copied unchanged into the result.
    Noise is drawn in arch order, so relabeling nodes permutes the output.
    The clean-layout estimate is clipped to ``[-clip, clip]`` in normalized
    units (``None`` disables); near eta = T alpha is tiny and the unclipped
    estimate would amplify denoiser error by ``1 / alpha``.
    """
    if isinstance(model, LayoutModel):
        if schedule is not None and schedule.T != model.schedule.T:
            raise ValueError(f"denoiser/schedule mismatch in T: {model.schedule.T} vs {schedule.T}")
        schedule = model.schedule
        norm = norm or model.norm
        net = model.denoiser
    else:
        net = model
        if schedule is None:
            raise ValueError("a schedule is required with a bare denoiser")
        norm = norm or LayoutNorm.identity()
    missing = [i for i, n in enumerate(graph.nodes) if n.missing or n.layout is None]
    if not missing:
        return graph
    if prompt is None:
        prompt = jaw_prompt(graph.jaw_side, graph.missing_ids())
    text = _as_embedding(prompt)
    batch = graph_batch([graph], [text], norm)
    order = batch["order"][0]
    known = batch["known"]
    x_known = batch["x0"].double()
    rng = np.random.default_rng(seed)
    shape = tuple(x_known.shape)
    x = torch.where(known[..., None], x_known, torch.from_numpy(rng.standard_normal(shape)))
    was_training = getattr(net, "training", False)
    if hasattr(net, "eval"):
        net.eval()
    try:
        with torch.no_grad():
            ts = sampling_timesteps(schedule.T, steps)
            for t, s in zip(ts[:-1], ts[1:]):
                eps_hat = net(x, torch.tensor([t]), batch).double()
                x0_hat = (x - schedule.sigma[t] * eps_hat) / schedule.alpha[t]
                if clip is not None:
                    x0_hat = x0_hat.clamp(-clip, clip)
                if s == 0:
                    x = x0_hat
                else:
                    cxt, cx0, var = posterior(schedule, t, s)
                    z = torch.from_numpy(rng.standard_normal(shape))
                    x = cxt * x + cx0 * x0_hat + math.sqrt(max(var, 0.0)) * z
                x = torch.where(known[..., None], x_known, x)
    finally:
        if was_training:
            net.train()
    out = x[0].numpy()
    nodes = list(graph.nodes)
    for slot, node_i in enumerate(order):
        node = graph.nodes[node_i]
        if node.layout is not None and not node.missing:
            continue
        v = norm.invert(out[slot])
        v[3:6] = np.maximum(v[3:6], MIN_EXTENT)
        v[6] = wrap_angle(float(v[6]))
        v[7] = wrap_angle(float(v[7]))
        nodes[node_i] = ToothNode(tooth_id=node.tooth_id, layout=ToothLayout.from_array(v),
                                  features=node.features, missing=False)
    return graph.replace_nodes(nodes)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    epoch: int = 0
    history: list = field(default_factory=list)
    optimizer_state: Optional[dict] = None


def _mask_graph(graph: JawGraph, rng: np.random.Generator, max_missing: int):
    from ..synthjaw import mask_missing

    k = int(rng.integers(1, max_missing + 1))
    ids = list(rng.choice(graph.tooth_ids, size=k, replace=False))
    return mask_missing(graph, [int(i) for i in ids])


def make_model(cfg: DenoiserConfig, T: int = 1000, kind: str = "cosine", norm: Optional[LayoutNorm] = None,
               seed: int = 0) -> LayoutModel:
    torch.manual_seed(seed)
    return LayoutModel(GraphDenoiser(cfg), make_schedule(T, kind), norm or LayoutNorm.identity())


def train_layout(model: LayoutModel, graphs: Sequence[JawGraph], epochs: int, batch_size: int = 32,
                 lr: float = 1e-3, seed: int = 0, max_missing: int = 4, state: Optional[TrainState] = None,
                 log: Optional[Callable] = None, lr_final: Optional[float] = None,
                 total_epochs: Optional[int] = None) -> TrainState:
    """Train for ``epochs`` passes over ``graphs`` (resumable via ``state``).

    Each epoch draws its shuffling, masks, timesteps, noise and dropout from
    generators seeded by ``(seed, epoch)``, so resuming reproduces the run.
    With ``lr_final`` the learning rate follows a cosine from ``lr`` to
    ``lr_final`` over ``total_epochs`` (default: this call's epoch count).
    """
    horizon = total_epochs or (state.epoch if state else 0) + epochs
    state = state or TrainState()
    net = model.denoiser
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    if state.optimizer_state is not None:
        opt.load_state_dict(state.optimizer_state)
    net.train()
    for _ in range(epochs):
        ep = state.epoch
        if lr_final is not None:
            frac = min(ep / max(horizon - 1, 1), 1.0)
            for group in opt.param_groups:
                group["lr"] = lr_final + 0.5 * (lr - lr_final) * (1.0 + math.cos(math.pi * frac))
        rng = np.random.default_rng([seed, ep])
        torch.manual_seed(seed * 1_000_003 + ep)
        perm = rng.permutation(len(graphs))
        losses = []
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            masked, truths, texts = [], [], []
            for i in idx:
                g, truth = _mask_graph(graphs[i], rng, max_missing)
                masked.append(g)
                truths.append(truth)
                texts.append(embed_text(jaw_prompt(g.jaw_side, g.missing_ids())).vector)
            batch = graph_batch(masked, texts, model.norm, targets=truths)
            opt.zero_grad(set_to_none=True)
            losses.append(train_step(net, batch, model.schedule, rng, sample_ids=[int(i) for i in idx]))
            opt.step()
        state.epoch += 1
        state.history.append(float(np.mean(losses)))
        if log is not None:
            log(state.epoch, state.history[-1])
    state.optimizer_state = opt.state_dict()
    net.eval()
    return state
