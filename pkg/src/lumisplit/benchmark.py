"""Recipes for the toy benchmark: dataset synthesis, run configs, log summaries.

Shared by the acceptance tests and the scripts/ entry points so that "the toy
benchmark" means exactly one thing everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import (
    ClipPair,
    DegradationParams,
    MotionSpec,
    make_clip_pair,
    make_test_pattern,
    save_clip_pair,
)
from .evaluation import EvalReport, evaluate
from .model import NetworkConfig
from .training import TrainConfig, fit

ABLATIONS = ("none", "wo_lr", "wo_ll", "wo_cf", "wo_dual")

TOY_SIZE = 64
TOY_T = 5
TOY_STEPS = 2000
TOY_BASE_CHANNELS = 16
TOY_DEPTH = 3


def random_motion(rng: np.random.Generator) -> MotionSpec:
    """Gentle rotation + drift that keeps >= 50% of pixels in bounds at toy scale."""
    return MotionSpec(
        dx_per_frame=float(rng.uniform(-1.5, 1.5)),
        dy_per_frame=float(rng.uniform(-1.5, 1.5)),
        rotate_deg_per_frame=float(rng.uniform(-2.0, 2.0)),
        jitter_px=0.2,
    )


def random_degradation(rng: np.random.Generator) -> DegradationParams:
    return DegradationParams(
        gamma=float(rng.uniform(2.0, 3.5)),
        scale=float(rng.uniform(0.1, 0.5)),
        read_noise_sigma=float(rng.uniform(0.002, 0.01)),
        shot_noise_scale=float(rng.uniform(0.0005, 0.003)),
        seed=int(rng.integers(2**31)),
    )


def synthesize_clip(
    clip_id: str,
    seed: int,
    size: tuple[int, int] = (TOY_SIZE, TOY_SIZE),
    T: int = TOY_T,
    base: np.ndarray | None = None,
) -> ClipPair:
    """One randomized low/normal clip pair; base defaults to a procedural pattern."""
    rng = np.random.default_rng(seed)
    h, w = size
    if base is None:
        base = make_test_pattern(h, w, rng)
    motion = random_motion(rng)
    params = random_degradation(rng)
    return make_clip_pair(base, T, motion, params, clip_id, rng_seed=int(rng.integers(2**31)))


def make_toy_dataset(
    out_dir: Path | str,
    n_clips: int,
    seed: int,
    size: tuple[int, int] = (TOY_SIZE, TOY_SIZE),
    T: int = TOY_T,
    prefix: str = "clip",
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n_clips):
        clip_id = f"{prefix}{i:03d}"
        pair = synthesize_clip(clip_id, seed=int(np.random.default_rng([seed, i]).integers(2**31)),
                               size=size, T=T)
        save_clip_pair(pair, out / clip_id)
    return out


def toy_config(
    seed: int = 0,
    total_steps: int = TOY_STEPS,
    ablation: str = "none",
    perturb_px: float = 0.0,
    keep_fraction: float = 1.0,
) -> TrainConfig:
    config = TrainConfig(
        lr_base=4e-4,
        batch_size=4,
        total_steps=total_steps,
        clip_length=TOY_T,
        seed=seed,
        perturb_px=perturb_px,
        keep_fraction=keep_fraction,
        crop=TOY_SIZE,
        network=NetworkConfig(base_channels=TOY_BASE_CHANNELS, depth=TOY_DEPTH),
    )
    return apply_ablation(config, ablation)


def apply_ablation(config: TrainConfig, name: str) -> TrainConfig:
    """Map an ablation name onto the loss/model toggles."""
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation '{name}'; valid: {', '.join(ABLATIONS)}")
    if name == "none":
        return config
    overrides = {
        "wo_lr": {"use_consistency": False},
        "wo_ll": {"use_smoothness": False},
        "wo_cf": {"use_cfim": False},
        "wo_dual": {"dual_supervision": False},
    }[name]
    return replace(config, **overrides)


def read_log(log_path: Path | str) -> list[dict]:
    lines = Path(log_path).read_text().splitlines()
    return [json.loads(l) for l in lines if l.strip()]


def loss_ratio(log_path: Path | str, head: int = 50, tail: int = 500) -> float:
    """(mean total over the last `tail` steps) / (mean over the first `head`)."""
    entries = read_log(log_path)
    if len(entries) < head + 1:
        raise ValueError(f"log too short: {len(entries)} steps")
    head_mean = float(np.mean([e["total"] for e in entries[:head]]))
    tail_mean = float(np.mean([e["total"] for e in entries[-tail:]]))
    return tail_mean / head_mean


@dataclass
class ToyRunResult:
    ckpt: Path
    out_dir: Path
    loss_ratio: float
    report: EvalReport  # held-out, mode=output
    psnr_enhanced: float
    psnr_low_input: float


def run_toy_benchmark(
    train_dir: Path | str,
    heldout_dir: Path | str,
    out_dir: Path | str,
    config: TrainConfig | None = None,
) -> ToyRunResult:
    """Train on train_dir, evaluate on heldout_dir, summarize."""
    config = config or toy_config()
    out = Path(out_dir)
    ckpt = fit(config, train_dir, out)
    report = evaluate(ckpt, heldout_dir, out / "eval", mode="output")
    return ToyRunResult(
        ckpt=ckpt,
        out_dir=out,
        loss_ratio=loss_ratio(out / "train_log.jsonl"),
        report=report,
        psnr_enhanced=report.mean["psnr"],
        psnr_low_input=report.mean["psnr_low_input"],
    )
