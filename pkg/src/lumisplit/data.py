"""Synthetic motion clips with exact ground-truth flow, low-light degradation, dataset IO.

Frames are float32 arrays of shape (H, W, 3) with values in [0, 1] (sRGB).
Flow fields map pixels of an earlier frame to locations in a later frame;
because the motion is generated analytically, the flows are exact rather
than estimated.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DataError

Frame = np.ndarray  # (H, W, 3) float32 in [0, 1]

FLOW_MAGIC = b"LSFL"
MIN_FRAME_SIDE = 8


def validate_frame(frame: np.ndarray, name: str = "frame") -> None:
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"{name}: expected (H, W, 3) array, got shape {frame.shape}")
    h, w = frame.shape[:2]
    if h < MIN_FRAME_SIDE or w < MIN_FRAME_SIDE:
        raise ValueError(f"{name}: frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {h}x{w}")
    if not np.all(np.isfinite(frame)):
        raise ValueError(f"{name}: non-finite values")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError(f"{name}: values outside [0, 1] (min {frame.min():.4g}, max {frame.max():.4g})")


@dataclass
class Clip:
    """An ordered sequence of same-sized frames."""

    frames: list[np.ndarray]
    clip_id: str

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError(f"clip '{self.clip_id}' needs at least 2 frames, got {len(self.frames)}")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ValueError(f"clip '{self.clip_id}' has mixed frame shapes: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        h, w = self.frames[0].shape[:2]
        return h, w


@dataclass
class FlowField:
    """Per-pixel (dx, dy) displacement from frame t1 onto frame t2.

    valid_mask is False wherever the displaced location falls outside the image.
    """

    displacement: np.ndarray  # (H, W, 2) float32
    valid_mask: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        h, w = self.displacement.shape[:2]
        return h, w


@dataclass
class DegradationParams:
    gamma: float
    scale: float
    read_noise_sigma: float
    shot_noise_scale: float
    seed: int

    def __post_init__(self):
        if self.gamma < 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if not (0.0 < self.scale <= 1.0):
            raise ValueError(f"scale must be in (0, 1], got {self.scale}")
        if self.read_noise_sigma < 0.0 or self.shot_noise_scale < 0.0:
            raise ValueError("noise parameters must be >= 0")


@dataclass
class MotionSpec:
    """Global per-frame motion: constant translation/rotation rates plus optional jitter.

    Rotation is about the image center (W/2, H/2). Per-frame translations may
    additionally be jittered by U(-jitter_px, +jitter_px); the jitter is
    resolved once at generation time so all flows stay analytically exact.
    """

    dx_per_frame: float = 0.0
    dy_per_frame: float = 0.0
    rotate_deg_per_frame: float = 0.0
    jitter_px: float = 0.0


@dataclass
class ClipPair:
    """Aligned low/normal clips with exact consecutive-frame flows."""

    low: Clip
    normal: Clip
    flows: list[FlowField]  # flows[t]: frame t -> frame t+1 on the shared grid
    degradation: DegradationParams

    def __post_init__(self):
        if len(self.low) != len(self.normal):
            raise ValueError(f"low/normal frame counts differ: {len(self.low)} vs {len(self.normal)}")
        if self.low.shape != self.normal.shape:
            raise ValueError(f"low/normal sizes differ: {self.low.shape} vs {self.normal.shape}")

    @property
    def clip_id(self) -> str:
        return self.normal.clip_id


# ---------------------------------------------------------------------------
# Warping primitives
# ---------------------------------------------------------------------------

def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample img (H, W, C) at float coordinates with edge clamping."""
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(img.dtype)


def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def sample_displaced(target: np.ndarray, flow: FlowField) -> np.ndarray:
    """Pull the later frame back onto the earlier frame's grid.

    out[p] = target[p + flow[p]], bilinear; only meaningful where
    flow.valid_mask is True.
    """
    h, w = flow.shape
    if target.shape[:2] != (h, w):
        raise ValueError(f"frame/flow sizes differ: {target.shape[:2]} vs {(h, w)}")
    xs, ys = _pixel_grid(h, w)
    return bilinear_sample(target, xs + flow.displacement[..., 0], ys + flow.displacement[..., 1])


def compose_flows(first: FlowField, second: FlowField) -> FlowField:
    """Chain a->b and b->c flows into a->c.

    The second displacement is sampled bilinearly at the first flow's targets;
    validity requires the first flow valid, all four bilinear neighbors of the
    intermediate location valid in the second mask, and the final target in
    bounds.
    """
    h, w = first.shape
    if second.shape != (h, w):
        raise ValueError(f"flow sizes differ: {first.shape} vs {second.shape}")
    xs, ys = _pixel_grid(h, w)
    tx = xs + first.displacement[..., 0]
    ty = ys + first.displacement[..., 1]

    d2 = bilinear_sample(second.displacement, tx, ty)
    disp = first.displacement + d2

    x0 = np.floor(np.clip(tx, 0, w - 1)).astype(np.int64)
    y0 = np.floor(np.clip(ty, 0, h - 1)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    m = second.valid_mask
    corners_valid = m[y0, x0] & m[y0, x1] & m[y1, x0] & m[y1, x1]

    fx = xs + disp[..., 0]
    fy = ys + disp[..., 1]
    in_bounds = (fx >= 0) & (fx <= w - 1) & (fy >= 0) & (fy <= h - 1)
    valid = first.valid_mask & corners_valid & in_bounds
    return FlowField(disp.astype(np.float32), valid)


def compose_flow_chain(flows: Sequence[FlowField]) -> FlowField:
    if not flows:
        raise ValueError("empty flow chain")
    acc = flows[0]
    for f in flows[1:]:
        acc = compose_flows(acc, f)
    return acc


# ---------------------------------------------------------------------------
# Motion clip synthesis
# ---------------------------------------------------------------------------

def _resolve_transforms(motion: MotionSpec, T: int, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """Per-frame (angle_rad, tx, ty); frame 0 is the identity."""
    out = [(0.0, 0.0, 0.0)]
    for t in range(1, T):
        angle = math.radians(motion.rotate_deg_per_frame) * t
        tx = motion.dx_per_frame * t
        ty = motion.dy_per_frame * t
        if motion.jitter_px > 0:
            jx, jy = rng.uniform(-motion.jitter_px, motion.jitter_px, size=2)
            tx += jx
            ty += jy
        out.append((angle, tx, ty))
    return out


def _analytic_flow(
    xf_from: tuple[float, float, float],
    xf_to: tuple[float, float, float],
    h: int,
    w: int,
) -> FlowField:
    """Exact flow between two resolved transforms of the same base frame.

    A scene point at p in the source frame came from base coordinate
    q = R(-a1)(p - c - t1) + c; in the target frame it sits at
    R(a2)(q - c) + c + t2, so the displacement is
    R(a2 - a1)(p - c - t1) + c + t2 - p.
    """
    a1, tx1, ty1 = xf_from
    a2, tx2, ty2 = xf_to
    cx, cy = w / 2.0, h / 2.0
    xs, ys = _pixel_grid(h, w)
    rel_x = xs - cx - tx1
    rel_y = ys - cy - ty1
    da = a2 - a1
    cos, sin = math.cos(da), math.sin(da)
    out_x = cos * rel_x - sin * rel_y + cx + tx2
    out_y = sin * rel_x + cos * rel_y + cy + ty2
    disp = np.stack([out_x - xs, out_y - ys], axis=-1).astype(np.float32)
    valid = (out_x >= 0) & (out_x <= w - 1) & (out_y >= 0) & (out_y <= h - 1)
    return FlowField(disp, valid)


def _render_frame(base: np.ndarray, xf: tuple[float, float, float]) -> np.ndarray:
    """base warped by the forward transform (inverse-mapped, edge clamped)."""
    angle, tx, ty = xf
    if angle == 0.0 and tx == 0.0 and ty == 0.0:
        return base.copy()
    h, w = base.shape[:2]
    cx, cy = w / 2.0, h / 2.0
    xs, ys = _pixel_grid(h, w)
    cos, sin = math.cos(-angle), math.sin(-angle)
    rel_x = xs - cx - tx
    rel_y = ys - cy - ty
    src_x = cos * rel_x - sin * rel_y + cx
    src_y = sin * rel_x + cos * rel_y + cy
    return bilinear_sample(base, src_x, src_y)


def generate_motion_clip(
    base: Frame,
    T: int,
    motion: MotionSpec,
    rng_seed: int,
    clip_id: str = "clip",
) -> tuple[Clip, list[FlowField]]:
    """Warp base through cumulative motion; return the clip plus exact consecutive flows.

    Rejects motion that leaves fewer than 50% of pixels in bounds over the
    full clip span.
    """
    validate_frame(base, "base")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    h, w = base.shape[:2]
    rng = np.random.default_rng(rng_seed)
    transforms = _resolve_transforms(motion, T, rng)

    span = _analytic_flow(transforms[0], transforms[-1], h, w)
    frac = float(span.valid_mask.mean())
    if frac < 0.5:
        raise ValueError(
            f"motion too large: only {frac:.0%} of pixels remain in bounds from frame 0 to {T - 1}"
        )

    frames = [_render_frame(base, xf) for xf in transforms]
    flows = [_analytic_flow(transforms[t], transforms[t + 1], h, w) for t in range(T - 1)]
    return Clip(frames, clip_id), flows


# ---------------------------------------------------------------------------
# Low-light degradation
# ---------------------------------------------------------------------------

def synthesize_low_light(frame: Frame, params: DegradationParams) -> Frame:
    """clip(scale * frame^gamma + n, 0, 1) with heteroscedastic Gaussian noise.

    The per-pixel noise std is sqrt(read^2 + shot * signal), i.e. a Gaussian
    approximation of shot noise on top of constant read noise. Deterministic
    for a given seed.
    """
    validate_frame(frame)
    signal = params.scale * np.power(frame.astype(np.float64), params.gamma)
    if params.read_noise_sigma > 0 or params.shot_noise_scale > 0:
        rng = np.random.default_rng(params.seed)
        std = np.sqrt(params.read_noise_sigma**2 + params.shot_noise_scale * signal)
        signal = signal + rng.standard_normal(signal.shape) * std
    return np.clip(signal, 0.0, 1.0).astype(np.float32)


def make_clip_pair(
    base: Frame,
    T: int,
    motion: MotionSpec,
    params: DegradationParams,
    clip_id: str,
    rng_seed: int,
) -> ClipPair:
    """Normal-light motion clip plus its degraded twin (per-frame seed = params.seed + t)."""
    normal, flows = generate_motion_clip(base, T, motion, rng_seed, clip_id=clip_id)
    low_frames = [
        synthesize_low_light(f, replace(params, seed=params.seed + t))
        for t, f in enumerate(normal.frames)
    ]
    low = Clip(low_frames, clip_id)
    return ClipPair(low=low, normal=normal, flows=flows, degradation=params)


# ---------------------------------------------------------------------------
# Dataset IO
# ---------------------------------------------------------------------------

def _save_png(frame: Frame, path: Path) -> None:
    arr = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _load_png(path: Path) -> Frame:
    if not path.exists():
        raise DataError(f"missing frame file: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_flow(flow: FlowField, path: Path) -> None:
    h, w = flow.shape
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(np.array([h, w], dtype="<i4").tobytes())
        f.write(flow.displacement.astype("<f4").tobytes())
        f.write(np.packbits(flow.valid_mask.reshape(-1)).tobytes())


def read_flow(path: Path) -> FlowField:
    if not path.exists():
        raise DataError(f"missing flow file: {path}")
    raw = path.read_bytes()
    if raw[:4] != FLOW_MAGIC:
        raise DataError(f"bad magic in flow file: {path}")
    h, w = np.frombuffer(raw[4:12], dtype="<i4")
    n = int(h) * int(w)
    disp_bytes = n * 2 * 4
    mask_bytes = (n + 7) // 8
    if len(raw) != 12 + disp_bytes + mask_bytes:
        raise DataError(f"truncated flow file: {path}")
    disp = np.frombuffer(raw[12 : 12 + disp_bytes], dtype="<f4").reshape(h, w, 2).copy()
    bits = np.frombuffer(raw[12 + disp_bytes :], dtype=np.uint8)
    mask = np.unpackbits(bits)[:n].reshape(h, w).astype(bool)
    return FlowField(disp, mask)


def save_clip_pair(pair: ClipPair, path: Path | str) -> None:
    """Write the `<clip_id>/{normal,low,flow}/...` + meta.json layout."""
    root = Path(path)
    for sub in ("normal", "low", "flow"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(pair.normal.frames):
        _save_png(frame, root / "normal" / f"{t:04d}.png")
    for t, frame in enumerate(pair.low.frames):
        _save_png(frame, root / "low" / f"{t:04d}.png")
    for t, flow in enumerate(pair.flows):
        write_flow(flow, root / "flow" / f"{t:04d}_to_{t + 1:04d}.flo-like")
    h, w = pair.normal.shape
    meta = {
        "clip_id": pair.clip_id,
        "T": len(pair.normal),
        "H": h,
        "W": w,
        "degradation_params": asdict(pair.degradation),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2))


def load_clip_pair(path: Path | str) -> ClipPair:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise DataError(f"missing meta file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        T = int(meta["T"])
        params = DegradationParams(**meta["degradation_params"])
        clip_id = meta["clip_id"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt meta file {meta_path}: {exc}") from exc

    def load_frames(sub: str) -> list[Frame]:
        frames = []
        for t in range(T):
            fp = root / sub / f"{t:04d}.png"
            if not fp.exists():
                raise DataError(f"clip '{clip_id}': missing frame {t:04d} ({fp})")
            frames.append(_load_png(fp))
        return frames

    normal_frames = load_frames("normal")
    low_frames = load_frames("low")
    if normal_frames[0].shape != low_frames[0].shape:
        raise DataError(
            f"clip '{clip_id}': low/normal shapes differ: "
            f"{low_frames[0].shape} vs {normal_frames[0].shape}"
        )
    expected = (int(meta["H"]), int(meta["W"]), 3)
    if normal_frames[0].shape != expected:
        raise DataError(
            f"clip '{clip_id}': frames are {normal_frames[0].shape}, meta says {expected}"
        )

    flows = []
    for t in range(T - 1):
        flow = read_flow(root / "flow" / f"{t:04d}_to_{t + 1:04d}.flo-like")
        if flow.shape != normal_frames[0].shape[:2]:
            raise DataError(f"clip '{clip_id}': flow {t:04d} size {flow.shape} mismatches frames")
        flows.append(flow)

    return ClipPair(
        low=Clip(low_frames, clip_id),
        normal=Clip(normal_frames, clip_id),
        flows=flows,
        degradation=params,
    )


def list_clip_dirs(dataset_dir: Path | str) -> list[Path]:
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    return sorted(p for p in root.iterdir() if (p / "meta.json").exists())


def load_dataset(dataset_dir: Path | str) -> list[ClipPair]:
    dirs = list_clip_dirs(dataset_dir)
    if not dirs:
        raise DataError(f"empty dataset: no clips under {dataset_dir}")
    return [load_clip_pair(d) for d in dirs]


# ---------------------------------------------------------------------------
# Procedural base frames (for the synthetic toy pipeline)
# ---------------------------------------------------------------------------

def make_test_pattern(h: int, w: int, rng: np.random.Generator, n_blobs: int = 6) -> Frame:
    """Smooth colorful pattern: random Gaussian blobs over a tilted gradient.

    Kept band-limited so bilinear warps stay accurate (the correspondence
    oracle checks assume interpolation error well under 0.02).
    """
    xs, ys = _pixel_grid(h, w)
    gx, gy = rng.uniform(-1, 1, size=2)
    grad = (gx * xs / w + gy * ys / h)
    channels = []
    for _ in range(3):
        fld = 0.6 * grad.copy()
        for _ in range(n_blobs):
            cx = rng.uniform(0, w)
            cy = rng.uniform(0, h)
            sigma = rng.uniform(min(h, w) / 10, min(h, w) / 3)
            amp = rng.uniform(-1.0, 1.0)
            fld += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
        channels.append(fld)
    img = np.stack(channels, axis=-1)
    lo, hi = img.min(), img.max()
    img = (img - lo) / max(hi - lo, 1e-9)
    return (0.05 + 0.9 * img).astype(np.float32)
