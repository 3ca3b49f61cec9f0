"""Patch-token transformer encoder that exposes every layer's output."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class TokenGrid:
    """Batched patch tokens of shape (B, H*W, D), flattened frequency-major (t = i*W + j)."""

    tokens: torch.Tensor
    H: int
    W: int

    def __post_init__(self):
        if self.tokens.dim() != 3 or self.tokens.shape[1] != self.H * self.W:
            raise ValueError(
                f"tokens of shape {tuple(self.tokens.shape)} do not match grid {self.H}x{self.W}"
            )

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def as_grid(self) -> torch.Tensor:
        """View as (B, H, W, D)."""
        return self.tokens.reshape(self.tokens.shape[0], self.H, self.W, self.dim)


@dataclass
class LayerStack:
    layers: list[TokenGrid]

    def __post_init__(self):
        shapes = {(g.H, g.W, g.dim) for g in self.layers}
        if len(shapes) > 1:
            raise ValueError(f"layers have heterogeneous shapes: {sorted(shapes)}")

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, idx):
        return self.layers[idx]

    def stacked(self) -> torch.Tensor:
        """(B, k, H*W, D) tensor of all layers in order."""
        return torch.stack([g.tokens for g in self.layers], dim=1)


class PatchEmbed(nn.Module):
    """Cut a (B, frames, n_mels) spectrogram into square patches and embed them.

    Trailing frames that do not fill a whole patch are dropped. Within a
    patch the flattening is row-major over (frequency, time).
    """

    def __init__(self, n_mels=128, max_frames=398, dim=64, patch_size=16):
        super().__init__()
        if n_mels % patch_size:
            raise ValueError(f"n_mels={n_mels} is not divisible by patch size {patch_size}")
        self.patch_size = patch_size
        self.n_mels = n_mels
        self.H = n_mels // patch_size
        self.max_W = max_frames // patch_size
        if self.max_W < 1:
            raise ValueError(f"need at least {patch_size} frames, got {max_frames}")
        self.proj = nn.Linear(patch_size * patch_size, dim, bias=False)
        self.pos_embed = nn.Parameter(torch.zeros(self.H, self.max_W, dim))
        nn.init.normal_(self.proj.weight, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.01)

    def grid_size(self, frames: int) -> tuple[int, int]:
        return self.H, frames // self.patch_size

    def patches(self, mel: torch.Tensor) -> torch.Tensor:
        """Raw flattened patches, (B, H*W, patch_size**2)."""
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        B, frames, n_mels = mel.shape
        p = self.patch_size
        if n_mels != self.n_mels:
            raise ValueError(f"expected {self.n_mels} mel bins, got {n_mels}")
        W = frames // p
        if W < 1:
            raise ValueError(f"need at least {p} frames, got {frames}")
        if W > self.max_W:
            raise ValueError(f"{frames} frames exceed the positional table ({self.max_W} patches)")
        x = mel[:, : W * p, :].transpose(1, 2)  # (B, n_mels, W*p): freq x time
        x = x.reshape(B, self.H, p, W, p).permute(0, 1, 3, 2, 4)
        return x.reshape(B, self.H * W, p * p)

    def forward(self, mel: torch.Tensor) -> TokenGrid:
        x = self.patches(mel)
        W = x.shape[1] // self.H
        pos = self.pos_embed[:, :W, :].reshape(self.H * W, -1)
        return TokenGrid(self.proj(x) + pos, self.H, W)


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, D = x.shape
        q, k, v = self.qkv(x).reshape(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * (D // self.heads) ** -0.5
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(B, N, D))


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class Encoder(nn.Module):
    """Pre-norm transformer stack; ``forward`` returns one grid per block."""

    def __init__(self, dim=64, depth=12, heads=4, mlp_ratio=4.0):
        super().__init__()
        if depth < 1:
            raise ValueError("encoder depth must be >= 1")
        self.dim = dim
        self.blocks = nn.ModuleList(Block(dim, heads, mlp_ratio) for _ in range(depth))
        self.apply(_init_weights)

    @property
    def depth(self):
        return len(self.blocks)

    def zero_residual_branches_(self):
        """Zero the attention and MLP output projections so every block is the identity."""
        for blk in self.blocks:
            for lin in (blk.attn.proj, blk.fc2):
                nn.init.zeros_(lin.weight)
                nn.init.zeros_(lin.bias)
        return self

    def forward(self, grid: TokenGrid) -> LayerStack:
        if grid.dim != self.dim:
            raise ValueError(f"token dim {grid.dim} does not match encoder dim {self.dim}")
        x = grid.tokens
        layers = []
        for blk in self.blocks:
            x = blk(x)
            layers.append(TokenGrid(x, grid.H, grid.W))
        return LayerStack(layers)


def _init_weights(m):
    if isinstance(m, nn.Linear):
        nn.init.normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)
