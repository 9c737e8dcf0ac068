"""Dual encoder-decoder with cross-frame attention at the deepest scale.

Both frames run through the same encoder and decoder weights; the only point
where information crosses frames is the interaction module on the deepest
feature maps. The head splits into a view-dependent map L_hat (positive,
bounded by L_max) and a view-independent map R_hat in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .losses import DecompositionOutput

L_FLOOR = 1e-4  # keeps L_hat strictly positive without killing gradients


@dataclass
class NetworkConfig:
    base_channels: int = 32
    depth: int = 3  # number of stride-2 downsamplings
    attention_scaled: bool = False
    L_max: float = 4.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.L_max <= L_FLOOR:
            raise ValueError(f"L_max must exceed {L_FLOOR}, got {self.L_max}")


def attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor, scaled: bool = False) -> torch.Tensor:
    """softmax(Q Kᵀ) V over token rows; optional 1/sqrt(C) scaling.

    Shapes (..., N, C), (..., N', C), (..., N', C); softmax normalizes each
    query's row over the N' keys.
    """
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError(f"Q/K channel dims differ: {Q.shape[-1]} vs {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise ValueError(f"K/V token counts differ: {K.shape[-2]} vs {V.shape[-2]}")
    scores = Q @ K.transpose(-2, -1)
    if scaled:
        scores = scores / math.sqrt(Q.shape[-1])
    return torch.softmax(scores, dim=-1) @ V


class CrossFrameInteraction(nn.Module):
    """Self + cross attention paths per frame, fused by a gated two-conv block."""

    def __init__(self, channels: int, scaled: bool = False):
        super().__init__()
        self.channels = channels
        self.scaled = scaled
        self.fuse1 = nn.Conv2d(2 * channels, 2 * channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        self.fuse2 = nn.Conv2d(2 * channels, 2 * channels, 3, padding=1)

    def attention_paths(
        self, f1: torch.Tensor, f2: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """The four pre-fusion maps: self(f1), cross(f1<-f2), self(f2), cross(f2<-f1)."""
        if f1.shape != f2.shape:
            raise ValueError(f"feature shapes differ: {tuple(f1.shape)} vs {tuple(f2.shape)}")
        b, c, h, w = f1.shape
        t1 = f1.flatten(2).transpose(1, 2)  # (B, h*w, C)
        t2 = f2.flatten(2).transpose(1, 2)

        def unflatten(t: torch.Tensor) -> torch.Tensor:
            return t.transpose(1, 2).reshape(b, c, h, w)

        f1_self = unflatten(attention(t1, t1, t1, self.scaled))
        f1_cross = unflatten(attention(t1, t2, t2, self.scaled))
        f2_self = unflatten(attention(t2, t2, t2, self.scaled))
        f2_cross = unflatten(attention(t2, t1, t1, self.scaled))
        return f1_self, f1_cross, f2_self, f2_cross

    def forward(self, f1: torch.Tensor, f2: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        f1_self, f1_cross, f2_self, f2_cross = self.attention_paths(f1, f2)
        stacked = torch.cat([f1 + f1_self + f1_cross, f2 + f2_self + f2_cross], dim=1)
        gate = torch.sigmoid(self.fuse2(self.act(self.fuse1(stacked))))
        fused = gate * stacked
        return fused[:, : self.channels], fused[:, self.channels :]


def _conv_block(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
        nn.LeakyReLU(0.2),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.LeakyReLU(0.2),
    )


class DualDecompositionNet(nn.Module):
    """Shared-weight U-Net over a frame pair with cross-frame attention at the bottom."""

    def __init__(self, config: NetworkConfig | None = None):
        super().__init__()
        self.config = config or NetworkConfig()
        base = self.config.base_channels
        depth = self.config.depth

        self.stem = nn.Sequential(nn.Conv2d(3, base, 3, padding=1), nn.LeakyReLU(0.2))
        self.downs = nn.ModuleList(
            [_conv_block(base * 2**i, base * 2 ** (i + 1), stride=2) for i in range(depth)]
        )
        self.cfim = CrossFrameInteraction(base * 2**depth, scaled=self.config.attention_scaled)
        self.up_convs = nn.ModuleList()
        self.fuse_convs = nn.ModuleList()
        for i in reversed(range(depth)):
            ch = base * 2**i
            self.up_convs.append(
                nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(2 * ch, ch, 3, padding=1),
                    nn.LeakyReLU(0.2),
                )
            )
            self.fuse_convs.append(
                nn.Sequential(nn.Conv2d(2 * ch, ch, 3, padding=1), nn.LeakyReLU(0.2))
            )
        self.head = nn.Conv2d(base, 6, 3, padding=1)

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (3, H, W) or (B, 3, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        div = 2**self.config.depth
        if h % div or w % div:
            raise ValueError(
                f"input size {h}x{w} not divisible by 2^depth = {div}; pad or crop the frames"
            )
        return x

    def _encode(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        h = self.stem(x)
        skips = [h]
        for down in self.downs:
            h = down(h)
            skips.append(h)
        return h, skips[:-1]  # deepest map is returned separately

    def _decode(self, h: torch.Tensor, skips: list[torch.Tensor]) -> DecompositionOutput:
        for up, fuse, skip in zip(self.up_convs, self.fuse_convs, reversed(skips)):
            h = up(h)
            h = fuse(torch.cat([h, skip], dim=1))
        raw = self.head(h)
        l_raw, r_raw = raw[:, :3], raw[:, 3:]
        L_max = self.config.L_max
        L_hat = L_FLOOR + (L_max - L_FLOOR) * torch.sigmoid(l_raw)
        R_hat = torch.sigmoid(r_raw)
        return DecompositionOutput(L_hat=L_hat, R_hat=R_hat)

    def forward_dual(
        self, x1: torch.Tensor, x2: torch.Tensor, use_cfim: bool = True
    ) -> tuple[DecompositionOutput, DecompositionOutput]:
        squeeze = x1.dim() == 3
        x1 = self._check_input(x1)
        x2 = self._check_input(x2)
        if x1.shape != x2.shape:
            raise ValueError(f"frame shapes differ: {tuple(x1.shape)} vs {tuple(x2.shape)}")
        f1, skips1 = self._encode(x1)
        f2, skips2 = self._encode(x2)
        if use_cfim:
            f1, f2 = self.cfim(f1, f2)
        out1 = self._decode(f1, skips1)
        out2 = self._decode(f2, skips2)
        if squeeze:
            out1 = DecompositionOutput(out1.L_hat.squeeze(0), out1.R_hat.squeeze(0))
            out2 = DecompositionOutput(out2.L_hat.squeeze(0), out2.R_hat.squeeze(0))
        return out1, out2

    def forward_single(
        self, x: torch.Tensor, x_ref: torch.Tensor, use_cfim: bool = True
    ) -> DecompositionOutput:
        return self.forward_dual(x, x_ref, use_cfim=use_cfim)[0]

    forward = forward_dual


def compose(out: DecompositionOutput, clip: bool = True) -> torch.Tensor:
    """Elementwise L_hat * R_hat; clipped to [0, 1] for export, unclipped for losses."""
    prod = out.L_hat * out.R_hat
    return prod.clamp(0.0, 1.0) if clip else prod


def closest_reference(t: int, T: int) -> int:
    """Reference index for enhancing frame t: the previous frame, or the next at t=0."""
    if T < 2:
        raise ValueError(f"clip too short for a reference frame: T={T}")
    if not 0 <= t < T:
        raise ValueError(f"frame index {t} outside clip of length {T}")
    return t - 1 if t >= 1 else 1
