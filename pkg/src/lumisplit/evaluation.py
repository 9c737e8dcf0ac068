"""Fidelity (PSNR/SSIM) and temporal-consistency metrics plus report generation.

Temporal losses warp with exact synthetic flows rather than estimated ones;
every report states this in its header fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import ClipPair, FlowField, compose_flow_chain, load_dataset, sample_displaced
from .model import closest_reference, compose
from .tensors import to_frame, to_tensor
from .training import load_model_for_eval

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SHORT_HORIZON = 1
LONG_HORIZON = 10
FLOW_SOURCE_NOTE = "exact synthetic flows (not estimated)"


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images, capped at 100 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    xs = np.arange(size) - half
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    k /= k.sum()
    return np.outer(k, k)


def _window_means(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode 2-D correlation of a single-channel image with the kernel."""
    kh, kw = kernel.shape
    windows = np.lib.stride_tricks.sliding_window_view(img, (kh, kw))
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5), valid-mode, channel-averaged."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    vals = []
    for c in range(a.shape[2]):
        x = a[..., c].astype(np.float64)
        y = b[..., c].astype(np.float64)
        mu_x = _window_means(x, kernel)
        mu_y = _window_means(y, kernel)
        mu_xx = _window_means(x * x, kernel)
        mu_yy = _window_means(y * y, kernel)
        mu_xy = _window_means(x * y, kernel)
        var_x = mu_xx - mu_x**2
        var_y = mu_yy - mu_y**2
        cov = mu_xy - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def temporal_loss(frames: list[np.ndarray], flows: list[FlowField], horizon: int) -> float:
    """Mean warped absolute difference across all (t, t+horizon) pairs.

    Each pair is evaluated on frame t's grid: frame t+horizon is pulled back
    through the composed exact flow and compared where the composition stays
    in bounds. Frames must be in [0, 1].
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    T = len(frames)
    if T < horizon + 1:
        raise ValueError(f"need at least {horizon + 1} frames for horizon {horizon}, got {T}")
    if len(flows) != T - 1:
        raise ValueError(f"expected {T - 1} consecutive flows, got {len(flows)}")
    diffs = []
    for t in range(T - horizon):
        flow = compose_flow_chain(flows[t : t + horizon])
        warped = sample_displaced(frames[t + horizon], flow)
        mask = flow.valid_mask
        if not mask.any():
            continue
        diff = np.abs(frames[t].astype(np.float64) - warped.astype(np.float64))
        diffs.append(float(diff[mask].mean()))
    if not diffs:
        raise ValueError("no frame pair kept any valid pixels")
    return float(np.mean(diffs))


@dataclass
class ClipMetrics:
    clip_id: str
    psnr: float
    ssim: float
    psnr_low_input: float
    temporal_short: float | None
    temporal_long: float | None
    temporal_short_R: float | None
    temporal_long_R: float | None


@dataclass
class EvalReport:
    mode: str
    checkpoint: str
    dataset: str
    flow_source: str
    clips: list[ClipMetrics]
    mean: dict[str, float | None]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _aggregate(clips: list[ClipMetrics]) -> dict[str, float | None]:
    keys = (
        "psnr", "ssim", "psnr_low_input",
        "temporal_short", "temporal_long", "temporal_short_R", "temporal_long_R",
    )
    out: dict[str, float | None] = {}
    for key in keys:
        vals = [getattr(c, key) for c in clips if getattr(c, key) is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


def _save_png(frame: np.ndarray, path: Path) -> None:
    arr = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def enhance_clip(
    model, pair: ClipPair, use_cfim: bool = True
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Frame-by-frame enhancement with the closest frame as reference.

    Returns (enhanced, L_hat, R_hat) frame lists as float arrays in [0, 1]
    (L_hat may exceed 1; it is returned unclipped).
    """
    T = len(pair.low)
    enhanced, l_frames, r_frames = [], [], []
    with torch.no_grad():
        for t in range(T):
            ref = closest_reference(t, T)
            out = model.forward_single(
                to_tensor(pair.low.frames[t]),
                to_tensor(pair.low.frames[ref]),
                use_cfim=use_cfim,
            )
            enhanced.append(to_frame(compose(out, clip=True)))
            l_frames.append(to_frame(out.L_hat))
            r_frames.append(to_frame(out.R_hat))
    return enhanced, l_frames, r_frames


def _clip_temporal(frames: list[np.ndarray], flows: list[FlowField]) -> tuple[float, float | None]:
    short = temporal_loss(frames, flows, SHORT_HORIZON)
    long_ = temporal_loss(frames, flows, LONG_HORIZON) if len(frames) >= LONG_HORIZON + 1 else None
    return short, long_


def evaluate(
    checkpoint_path: Path | str,
    dataset_path: Path | str,
    out_dir: Path | str,
    mode: str = "output",
) -> EvalReport:
    """Enhance every clip, score it, and write eval_report.json plus frames.

    mode=output computes temporal losses on the composed output; mode=R_term
    computes them on the view-independent map R_hat (and dumps R frames).
    PSNR/SSIM are always measured between the composed output and the
    normal-light clip.
    """
    if mode not in ("output", "R_term"):
        raise ValueError(f"mode must be 'output' or 'R_term', got '{mode}'")
    model, train_config = load_model_for_eval(checkpoint_path)
    dataset = load_dataset(dataset_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    clips = []
    for pair in dataset:
        enhanced, _, r_frames = enhance_clip(model, pair, use_cfim=train_config.use_cfim)
        clip_dir = out / pair.clip_id / "enhanced"
        clip_dir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(enhanced):
            _save_png(frame, clip_dir / f"{t:04d}.png")

        frame_psnr = [psnr(e, n) for e, n in zip(enhanced, pair.normal.frames)]
        frame_ssim = [ssim(e, n) for e, n in zip(enhanced, pair.normal.frames)]
        low_psnr = [psnr(d, n) for d, n in zip(pair.low.frames, pair.normal.frames)]

        t_short = t_long = t_short_r = t_long_r = None
        if mode == "output":
            t_short, t_long = _clip_temporal(enhanced, pair.flows)
        else:
            r_clipped = [np.clip(f, 0.0, 1.0) for f in r_frames]
            t_short_r, t_long_r = _clip_temporal(r_clipped, pair.flows)
            r_dir = out / pair.clip_id / "R"
            r_dir.mkdir(parents=True, exist_ok=True)
            for t, frame in enumerate(r_clipped):
                _save_png(frame, r_dir / f"{t:04d}.png")

        clips.append(
            ClipMetrics(
                clip_id=pair.clip_id,
                psnr=float(np.mean(frame_psnr)),
                ssim=float(np.mean(frame_ssim)),
                psnr_low_input=float(np.mean(low_psnr)),
                temporal_short=t_short,
                temporal_long=t_long,
                temporal_short_R=t_short_r,
                temporal_long_R=t_long_r,
            )
        )

    report = EvalReport(
        mode=mode,
        checkpoint=str(checkpoint_path),
        dataset=str(dataset_path),
        flow_source=FLOW_SOURCE_NOTE,
        clips=clips,
        mean=_aggregate(clips),
    )
    (out / "eval_report.json").write_text(report.to_json())
    return report
