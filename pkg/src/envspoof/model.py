"""End-to-end detector: patches -> encoder -> top-k fusion -> split -> branches -> head."""

from __future__ import annotations

import torch
import torch.nn as nn

from .branches import GraphBranch, classify, split_grid
from .encoder import Encoder, PatchEmbed
from .fusion import build_fusion, select_topk


class Detector(nn.Module):
    def __init__(
        self,
        n_mels=128,
        max_frames=398,
        patch_size=16,
        dim=64,
        depth=12,
        heads=4,
        mlp_ratio=4.0,
        fusion="se_gate",
        k=4,
        se_reduction=2,
        split="channel",
        branch_dim=32,
        branch_layers=2,
        input_mean=-10.0,
        input_std=8.0,
    ):
        super().__init__()
        # fixed affine input normalization of log-mel values
        self.input_mean = input_mean
        self.input_std = input_std
        if not 1 <= k <= depth:
            raise ValueError(f"fusion k={k} must lie in [1, depth={depth}]")
        self.split = split
        self.k = k
        self.patch_embed = PatchEmbed(n_mels, max_frames, dim, patch_size)
        self.encoder = Encoder(dim, depth, heads, mlp_ratio)
        self.fusion = build_fusion(fusion, k, dim, se_reduction)
        if split == "frequency" and self.patch_embed.H % 2:
            raise ValueError(f"frequency split needs an even patch-row count, got {self.patch_embed.H}")
        if split == "channel" and dim % 2:
            raise ValueError(f"channel split needs an even dim, got {dim}")
        n_branches = 1 if split == "none" else 2
        branch_in = dim // 2 if split == "channel" else dim
        self.branches = nn.ModuleList(
            GraphBranch(branch_in, branch_dim, branch_layers) for _ in range(n_branches)
        )
        self.head = nn.Linear(n_branches * self.branches[0].readout_dim, 2)

    def forward(self, mel: torch.Tensor, return_intermediates: bool = False):
        """Map a (B, frames, n_mels) log-mel batch to (B, 2) logits ordered (fake, real)."""
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        x = (mel - self.input_mean) / self.input_std
        grid = self.patch_embed(x)
        stack = self.encoder(grid)
        topk = select_topk(stack, self.k)
        fused, weights = self.fusion(topk, x)
        parts = split_grid(fused, self.split)
        embeddings = [branch(part) for branch, part in zip(self.branches, parts)]
        logits = classify(embeddings, self.head)
        if not return_intermediates:
            return logits
        return logits, {
            "grid": grid,
            "stack": stack,
            "fused": fused,
            "fusion_weights": weights,
            "parts": parts,
            "embeddings": embeddings,
        }

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Named trainable parameters keyed by component."""
        groups = {"encoder": [], "gate": [], "head": []}
        for name, p in self.named_parameters():
            top = name.split(".")[0]
            if top in ("patch_embed", "encoder"):
                groups["encoder"].append((name, p))
            elif top == "fusion":
                groups["gate"].append((name, p))
            elif top == "branches":
                groups.setdefault(f"branch{name.split('.')[1]}", []).append((name, p))
            else:
                groups["head"].append((name, p))
        return groups
