"""Shared test utilities: finite-difference gradient checks and brute-force oracles.

The oracles here are intentionally naive (scalar loops, no vectorization) so
they cannot share bugs with the library implementations they verify.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import torch

FD_STEP = 1e-3
FD_RTOL = 1e-2


def fd_gradient(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, eps: float = FD_STEP) -> torch.Tensor:
    """Central finite differences, coordinate by coordinate. x must be float64."""
    g = torch.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.numel()):
        orig = flat_x[i].item()
        flat_x[i] = orig + eps
        hi = float(fn(x))
        flat_x[i] = orig - eps
        lo = float(fn(x))
        flat_x[i] = orig
        flat_g[i] = (hi - lo) / (2 * eps)
    return g


def analytic_gradient(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach().clone()


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


def check_gradient(
    fn: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    eps: float = FD_STEP,
    rtol: float = FD_RTOL,
) -> float:
    """Assert analytic and finite-difference gradients agree; returns the rel error."""
    assert x.dtype == torch.float64, "finite differences need float64 inputs"
    ga = analytic_gradient(fn, x)
    gf = fd_gradient(fn, x.detach().clone(), eps)
    err = relative_error(ga, gf)
    assert err < rtol, f"gradient mismatch: rel error {err:.3e} >= {rtol}"
    return err


def directional_parameter_check(
    loss_fn: Callable[[], torch.Tensor],
    params: list[torch.nn.Parameter],
    seed: int,
    eps: float = FD_STEP,
    rtol: float = FD_RTOL,
) -> float:
    """Compare d.grad against the central FD of the loss along a random direction d.

    Coordinate-wise FD over every network weight is infeasible; the projected
    derivative catches the same systematic errors. Parameters must be float64.
    """
    for p in params:
        assert p.dtype == torch.float64, "finite differences need float64 parameters"
        if p.grad is not None:
            p.grad = None
    loss_fn().backward()
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    gen = torch.Generator().manual_seed(seed)
    direction = [torch.randn(p.shape, generator=gen, dtype=torch.float64) for p in params]
    norm = math.sqrt(sum(float((d**2).sum()) for d in direction))
    direction = [d / norm for d in direction]

    analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction))
    with torch.no_grad():
        for p, d in zip(params, direction):
            p += eps * d
        hi = float(loss_fn())
        for p, d in zip(params, direction):
            p -= 2 * eps * d
        lo = float(loss_fn())
        for p, d in zip(params, direction):
            p += eps * d
    fd = (hi - lo) / (2 * eps)
    err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-12)
    assert err < rtol, f"parameter gradient mismatch: rel error {err:.3e} >= {rtol}"
    return err


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------

def brute_smoothness_weights(I_d: np.ndarray, delta: float = 1e-4, log_eps: float = 1e-6):
    """Scalar-loop evaluation of the reciprocal log-gradient weights."""
    c, h, w = I_d.shape
    U = np.log(I_d.astype(np.float64) + log_eps)
    v = np.zeros((c, h, w))
    w_y = np.zeros((c, h, w))
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                dx = U[ch, i, j + 1] - U[ch, i, j] if j + 1 < w else 0.0
                dy = U[ch, i + 1, j] - U[ch, i, j] if i + 1 < h else 0.0
                v[ch, i, j] = 1.0 / (abs(dx) + delta)
                w_y[ch, i, j] = 1.0 / (abs(dy) + delta)
    return v, w_y


def brute_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray, scaled: bool = False) -> np.ndarray:
    """Double-loop softmax/matmul."""
    n, c = Q.shape
    npr = K.shape[0]
    out = np.zeros((n, V.shape[1]))
    for i in range(n):
        scores = np.zeros(npr)
        for j in range(npr):
            s = float(np.dot(Q[i], K[j]))
            scores[j] = s / math.sqrt(c) if scaled else s
        scores -= scores.max()
        weights = np.exp(scores)
        weights /= weights.sum()
        for j in range(npr):
            out[i] += weights[j] * V[j]
    return out


def brute_ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
               k1: float = 0.01, k2: float = 0.03) -> float:
    """Sliding-window SSIM with explicit per-window loops (single or 3 channel)."""
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    h, w, nc = a.shape
    half = (window - 1) / 2.0
    xs = np.arange(window) - half
    k = np.exp(-(xs**2) / (2 * sigma**2))
    k /= k.sum()
    kern = np.outer(k, k)
    c1, c2 = k1**2, k2**2
    vals = []
    for ch in range(nc):
        x = a[..., ch].astype(np.float64)
        y = b[..., ch].astype(np.float64)
        scores = []
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                wx = x[i : i + window, j : j + window]
                wy = y[i : i + window, j : j + window]
                mx = float((kern * wx).sum())
                my = float((kern * wy).sum())
                vx = float((kern * wx * wx).sum()) - mx**2
                vy = float((kern * wy * wy).sum()) - my**2
                cov = float((kern * wx * wy).sum()) - mx * my
                scores.append(
                    ((2 * mx * my + c1) * (2 * cov + c2))
                    / ((mx**2 + my**2 + c1) * (vx + vy + c2))
                )
        vals.append(float(np.mean(scores)))
    return float(np.mean(vals))


def random_frame(rng: np.random.Generator, h: int = 16, w: int = 16) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(h, w, 3)).astype(np.float32)
