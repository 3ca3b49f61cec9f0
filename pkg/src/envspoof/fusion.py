"""Top-k layer fusion: concatenation, CNN-gated and SE-gated."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import LayerStack, TokenGrid

FUSION_MODES = ("concat", "cnn_gate", "se_gate")


def select_topk(stack: LayerStack, k: int) -> LayerStack:
    """Last ``k`` layers, in encoder order."""
    if not 1 <= k <= len(stack):
        raise ValueError(f"k={k} out of range for a {len(stack)}-layer stack")
    return LayerStack(stack.layers[len(stack) - k :])


def weighted_sum(topk: LayerStack, weights: torch.Tensor) -> TokenGrid:
    """Per-sample convex combination of layers; weights has shape (B, k)."""
    fused = torch.einsum("bk,bknd->bnd", weights, topk.stacked())
    g = topk[0]
    return TokenGrid(fused, g.H, g.W)


class ConcatFusion(nn.Module):
    """Concatenate the k layers per token (layer-major) and project k*D -> D."""

    def __init__(self, dim, k):
        super().__init__()
        self.k = k
        self.proj = nn.Linear(k * dim, dim)

    def init_identity_(self, layer=-1):
        """Make the projection pick out one stacked layer unchanged."""
        dim = self.proj.out_features
        layer = layer % self.k
        with torch.no_grad():
            self.proj.weight.zero_()
            self.proj.weight[:, layer * dim : (layer + 1) * dim] = torch.eye(dim)
            self.proj.bias.zero_()
        return self

    def forward(self, topk: LayerStack, mel=None):
        if len(topk) != self.k:
            raise ValueError(f"expected {self.k} layers, got {len(topk)}")
        x = topk.stacked()  # (B, k, N, D)
        B, k, N, D = x.shape
        x = x.permute(0, 2, 1, 3).reshape(B, N, k * D)
        g = topk[0]
        return TokenGrid(self.proj(x), g.H, g.W), None


class CNNGateFusion(nn.Module):
    """Fusion weights from the mel-spectrogram: three stride-2 convs, GAP, linear, softmax."""

    def __init__(self, k, channels=(8, 16, 32), patch_size=16):
        super().__init__()
        self.k = k
        self.patch_size = patch_size
        layers = []
        c_in = 1
        for c in channels:
            layers += [nn.Conv2d(c_in, c, kernel_size=3, stride=2, padding=1), nn.ReLU()]
            c_in = c
        self.convs = nn.Sequential(*layers)
        self.fc = nn.Linear(c_in, k)

    def logits(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        h = self.convs(mel.unsqueeze(1))  # (B, 1, frames, n_mels) image
        return self.fc(h.mean(dim=(2, 3)))

    def forward(self, topk: LayerStack, mel: torch.Tensor):
        if len(topk) != self.k:
            raise ValueError(f"expected {self.k} layers, got {len(topk)}")
        if mel is None:
            raise ValueError("CNN-gated fusion needs the input mel-spectrogram")
        if mel.dim() == 2:
            mel = mel.unsqueeze(0)
        g = topk[0]
        if mel.shape[0] != g.tokens.shape[0] or mel.shape[1] < self.patch_size * g.W:
            raise ValueError(
                f"mel of shape {tuple(mel.shape)} is not the encoder input for a "
                f"{g.H}x{g.W} grid with batch {g.tokens.shape[0]}"
            )
        w = F.softmax(self.logits(mel), dim=-1)
        return weighted_sum(topk, w), w


class SEGateFusion(nn.Module):
    """Squeeze each layer to its mean, excite with a k -> ceil(k/r) -> k MLP, softmax."""

    def __init__(self, k, reduction=2):
        super().__init__()
        self.k = k
        hidden = math.ceil(k / reduction)
        self.fc1 = nn.Linear(k, hidden)
        self.fc2 = nn.Linear(hidden, k)

    def logits(self, topk: LayerStack) -> torch.Tensor:
        squeezed = topk.stacked().mean(dim=(2, 3))  # (B, k)
        return self.fc2(F.relu(self.fc1(squeezed)))

    def forward(self, topk: LayerStack, mel=None):
        if len(topk) != self.k:
            raise ValueError(f"expected {self.k} layers, got {len(topk)}")
        w = F.softmax(self.logits(topk), dim=-1)
        return weighted_sum(topk, w), w


def build_fusion(mode: str, k: int, dim: int, se_reduction: int = 2) -> nn.Module:
    if mode == "concat":
        return ConcatFusion(dim, k)
    if mode == "cnn_gate":
        return CNNGateFusion(k)
    if mode == "se_gate":
        return SEGateFusion(k, se_reduction)
    raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")


def zero_gate_output_(fusion: nn.Module):
    """Zero the final gate layer so the gate emits uniform weights."""
    last = fusion.fc if isinstance(fusion, CNNGateFusion) else fusion.fc2
    nn.init.zeros_(last.weight)
    nn.init.zeros_(last.bias)
    return fusion
