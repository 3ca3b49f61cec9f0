"""Frequency/channel splitting and the graph-attention back-end branches."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import TokenGrid

SPLIT_MODES = ("frequency", "channel", "none")
FAKE, REAL = 0, 1


def split_frequency(g: TokenGrid) -> tuple[TokenGrid, TokenGrid]:
    """Lower mel rows (0 .. H/2-1) and upper rows, each an (H/2, W) grid."""
    if g.H % 2:
        raise ValueError(f"frequency split needs an even patch-row count, got H={g.H}")
    half = g.H // 2
    n = half * g.W  # frequency-major layout: the low rows are a token prefix
    return TokenGrid(g.tokens[:, :n], half, g.W), TokenGrid(g.tokens[:, n:], half, g.W)


def split_channel(g: TokenGrid) -> tuple[TokenGrid, TokenGrid]:
    if g.dim % 2:
        raise ValueError(f"channel split needs an even token width, got D={g.dim}")
    half = g.dim // 2
    return TokenGrid(g.tokens[..., :half], g.H, g.W), TokenGrid(g.tokens[..., half:], g.H, g.W)


def split_grid(g: TokenGrid, mode: str) -> tuple[TokenGrid, ...]:
    if mode == "frequency":
        return split_frequency(g)
    if mode == "channel":
        return split_channel(g)
    if mode == "none":
        return (g,)
    raise ValueError(f"unknown split mode {mode!r}; expected one of {SPLIT_MODES}")


class GraphAttentionLayer(nn.Module):
    """Dense attention over the fully connected token graph with a residual update."""

    def __init__(self, dim):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, h):
        x = self.norm(h)
        scores = self.query(x) @ self.key(x).transpose(-2, -1) * x.shape[-1] ** -0.5
        msg = scores.softmax(dim=-1) @ self.value(x)
        return h + F.selu(self.out(msg))


class GraphBranch(nn.Module):
    """Project tokens to width E, run G graph-attention layers, read out [max; mean] (2E)."""

    def __init__(self, in_dim, dim=32, n_layers=2):
        super().__init__()
        if dim < 2 or n_layers < 1:
            raise ValueError("branch needs dim >= 2 and at least one graph layer")
        self.in_dim = in_dim
        self.proj = nn.Linear(in_dim, dim)
        self.layers = nn.ModuleList(GraphAttentionLayer(dim) for _ in range(n_layers))

    @property
    def readout_dim(self):
        return 2 * self.proj.out_features

    def forward(self, g: TokenGrid) -> torch.Tensor:
        if g.dim != self.in_dim:
            raise ValueError(f"branch expects token width {self.in_dim}, got {g.dim}")
        h = self.proj(g.tokens)
        for layer in self.layers:
            h = layer(h)
        return torch.cat([h.amax(dim=1), h.mean(dim=1)], dim=-1)


def classify(embeddings, head: nn.Linear) -> torch.Tensor:
    """Concatenate per-branch embeddings and map to (fake, real) logits."""
    e = torch.cat(list(embeddings), dim=-1)
    if e.shape[-1] != head.in_features:
        raise ValueError(f"head expects width {head.in_features}, got {e.shape[-1]}")
    return head(e)


def score(logits: torch.Tensor) -> torch.Tensor:
    """Bona fide score: real logit minus fake logit."""
    return logits[..., REAL] - logits[..., FAKE]
