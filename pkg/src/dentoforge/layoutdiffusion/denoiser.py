"""Graph transformer that predicts layout noise for jaw graphs."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..jawgraph import FEATURE_DIM, RELATIONS
from .text import TEXT_DIM

N_CATEGORIES = 32
LAYOUT_DIM = 8


@dataclass(frozen=True)
class DenoiserConfig:
    width: int = 64
    blocks: int = 5
    heads: int = 8
    dropout: float = 0.1
    text_dim: int = TEXT_DIM
    feature_dim: int = FEATURE_DIM
    text_tokens: int = 4

    def to_dict(self) -> dict:
        return asdict(self)


PAPER_PROFILE = DenoiserConfig(width=512, blocks=5, heads=8, dropout=0.1)
TOY_PROFILE = DenoiserConfig(width=64, blocks=5, heads=8, dropout=0.1)


def timestep_embedding(eta: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half).to(eta.device)
    args = eta.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class GraphBlock(nn.Module):
    """Relation-biased graph attention, text cross-attention, then an MLP."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        d, h = cfg.width, cfg.heads
        self.heads = h
        self.norm1 = nn.LayerNorm(d)
        self.graph_attn = nn.MultiheadAttention(d, h, dropout=cfg.dropout, batch_first=True)
        self.rel_bias = nn.Parameter(torch.zeros(len(RELATIONS), h))
        self.norm2 = nn.LayerNorm(d)
        self.cross_attn = nn.MultiheadAttention(d, h, dropout=cfg.dropout, batch_first=True)
        self.norm3 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Dropout(cfg.dropout), nn.Linear(4 * d, d))
        self.drop = nn.Dropout(cfg.dropout)

    def graph_mask(self, adj: torch.Tensor) -> torch.Tensor:
        # adj: (B, R, N, N) -> additive mask (B * heads, N, N)
        b, _, n, _ = adj.shape
        bias = torch.einsum("brij,rh->bhij", adj, self.rel_bias)
        allowed = (adj.sum(dim=1) > 0) | torch.eye(n, dtype=torch.bool, device=adj.device)[None]
        neg = torch.full_like(bias, float("-inf"))
        mask = torch.where(allowed[:, None], bias, neg)
        return mask.reshape(b * self.heads, n, n)

    def forward(self, h, adj, text_tokens):
        x = self.norm1(h)
        a, _ = self.graph_attn(x, x, x, attn_mask=self.graph_mask(adj), need_weights=False)
        h = h + self.drop(a)
        x = self.norm2(h)
        a, _ = self.cross_attn(x, text_tokens, text_tokens, need_weights=False)
        h = h + self.drop(a)
        return h + self.drop(self.mlp(self.norm3(h)))


class GraphDenoiser(nn.Module):
    """Predicts per-node layout noise from a noisy target graph and its source graph.

    Node input: category embedding, noisy layout, features, source layout and
    observed flag (the source-graph context), plus a timestep embedding.
    Output shape is (B, N, 8).
    """

    def __init__(self, cfg: DenoiserConfig = TOY_PROFILE):
        super().__init__()
        self.cfg = cfg
        d = cfg.width
        self.cat_embed = nn.Embedding(N_CATEGORIES, d)
        self.node_in = nn.Linear(LAYOUT_DIM + cfg.feature_dim + LAYOUT_DIM + 1, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.text_in = nn.Linear(cfg.text_dim, cfg.text_tokens * d)
        self.blocks = nn.ModuleList(GraphBlock(cfg) for _ in range(cfg.blocks))
        self.norm_out = nn.LayerNorm(d)
        self.head = nn.Linear(d, LAYOUT_DIM)

    def forward(self, x_t, eta, batch):
        """``x_t``: (B, N, 8) noisy normalized layouts; ``eta``: (B,) timesteps."""
        dtype = self.head.weight.dtype
        x_t = x_t.to(dtype)
        b, n, _ = x_t.shape
        known = batch["known"].to(dtype)[..., None]
        src = batch["source"].to(dtype) * known
        node = torch.cat([x_t, batch["features"].to(dtype), src, known], dim=-1)
        h = self.cat_embed(batch["categories"]) + self.node_in(node)
        temb = self.time_mlp(timestep_embedding(eta, self.cfg.width).to(dtype))
        h = h + temb[:, None, :]
        text = self.text_in(batch["text"].to(dtype)).reshape(b, self.cfg.text_tokens, self.cfg.width)
        adj = batch["adj"].to(dtype)
        for blk in self.blocks:
            h = blk(h, adj, text)
        return self.head(self.norm_out(h))
