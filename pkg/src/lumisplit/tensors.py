"""Conversions between numpy frames (H, W, 3) and torch tensors (3, H, W)."""

from __future__ import annotations

import numpy as np
import torch


def to_tensor(frame: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 3) numpy array -> (3, H, W) torch tensor."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {frame.shape}")
    return torch.from_numpy(np.ascontiguousarray(frame)).permute(2, 0, 1).to(dtype)


def to_frame(t: torch.Tensor) -> np.ndarray:
    """(3, H, W) torch tensor -> (H, W, 3) float32 numpy array."""
    if t.dim() != 3 or t.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) tensor, got {tuple(t.shape)}")
    return t.detach().permute(1, 2, 0).cpu().numpy().astype(np.float32)
