"""Command-line entry point: synthesize, train, enhance, evaluate.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 checkpoint error. The
environment variable LUMISPLIT_SEED overrides the configured seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .benchmark import ABLATIONS, apply_ablation, random_degradation, random_motion
from .data import load_dataset, make_clip_pair, make_test_pattern, save_clip_pair
from .errors import CheckpointError, DataError
from .evaluation import enhance_clip, evaluate
from .training import config_to_dict, fit, load_model_for_eval, parse_config_file

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4

SEED_ENV_VAR = "LUMISPLIT_SEED"


def _hash_inputs(paths: list[Path]) -> str:
    """Content hash over the input files (names + bytes), stable across runs."""
    h = hashlib.sha1()
    for root in paths:
        root = Path(root)
        if root.is_file():
            files = [root]
        elif root.is_dir():
            files = sorted(p for p in root.rglob("*") if p.is_file())
        else:
            continue
        for f in files:
            h.update(str(f.relative_to(root.parent) if root.is_dir() else f.name).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def _write_manifest(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, default=str))


def _env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{SEED_ENV_VAR} must be an integer, got '{raw}'") from None


def _parse_size(raw: str) -> tuple[int, int]:
    try:
        w_str, h_str = raw.lower().split("x")
        h, w = int(h_str), int(w_str)
    except ValueError:
        raise ValueError(f"--size expects WxH (e.g. 64x64), got '{raw}'") from None
    if h < 8 or w < 8:
        raise ValueError(f"--size must be at least 8x8, got {raw}")
    return h, w


def _load_source_images(src_dir: Path, size: tuple[int, int]) -> list[np.ndarray]:
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    files = sorted(p for p in src_dir.iterdir() if p.suffix.lower() in exts)
    if not files:
        raise DataError(f"no images found in {src_dir}")
    h, w = size
    frames = []
    for f in files:
        try:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB").resize((w, h), Image.BILINEAR), dtype=np.float32)
        except OSError as exc:
            raise DataError(f"unreadable source image {f}: {exc}") from exc
        frames.append(arr / 255.0)
    return frames


def cmd_synthesize(args: argparse.Namespace) -> int:
    started = time.time()
    if args.frames < 2:
        raise ValueError(f"--frames must be >= 2, got {args.frames}")
    size = _parse_size(args.size)
    seed = _env_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    bases: list[np.ndarray] | None = None
    if args.source_images:
        bases = _load_source_images(Path(args.source_images), size)

    for i in range(args.clips):
        clip_id = f"clip{i:03d}"
        rng = np.random.default_rng([seed, i])
        if bases is not None:
            base = bases[i % len(bases)]
        else:
            base = make_test_pattern(size[0], size[1], rng)
        pair = make_clip_pair(
            base,
            args.frames,
            random_motion(rng),
            random_degradation(rng),
            clip_id,
            rng_seed=int(rng.integers(2**31)),
        )
        save_clip_pair(pair, out / clip_id)

    _write_manifest(
        out,
        {
            "command": "synthesize",
            "argv": sys.argv[1:],
            "version": __version__,
            "seed": seed,
            "clips": args.clips,
            "frames": args.frames,
            "size": args.size,
            "source_images": args.source_images or "procedural",
            "inputs_hash": _hash_inputs([Path(args.source_images)]) if args.source_images else None,
            "started": started,
            "finished": time.time(),
        },
    )
    print(f"wrote {args.clips} clips to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    started = time.time()
    config = parse_config_file(args.config)
    config = apply_ablation(config, args.ablation)
    overrides: dict = {"seed": _env_seed(config.seed)}
    if args.perturb_px is not None:
        overrides["perturb_px"] = args.perturb_px
    if args.keep_fraction is not None:
        overrides["keep_fraction"] = args.keep_fraction
    from dataclasses import replace

    config = replace(config, **overrides)

    source_marks = [config.correspondence_source]
    if config.perturb_px > 0:
        source_marks.append("perturbed")
    if config.keep_fraction < 1.0:
        source_marks.append("reduced")

    out = Path(args.out)
    ckpt = fit(config, args.data, out, resume=args.resume)
    _write_manifest(
        out,
        {
            "command": "train",
            "argv": sys.argv[1:],
            "version": __version__,
            "config_path": str(args.config),
            "config": config_to_dict(config),
            "seed": config.seed,
            "ablation": args.ablation,
            "correspondence_source": "+".join(source_marks),
            "data": str(args.data),
            "inputs_hash": _hash_inputs([Path(args.data), Path(args.config)]),
            "final_checkpoint": str(ckpt),
            "started": started,
            "finished": time.time(),
        },
    )
    print(f"finished {config.total_steps} steps; final checkpoint {ckpt}")
    return EXIT_OK


def cmd_enhance(args: argparse.Namespace) -> int:
    started = time.time()
    model, train_config = load_model_for_eval(args.ckpt)
    dataset = load_dataset(args.input)
    out = Path(args.out)
    from .data import _save_png  # shared 8-bit writer

    n_frames = 0
    for pair in dataset:
        try:
            enhanced, l_frames, r_frames = enhance_clip(
                model, pair, use_cfim=train_config.use_cfim
            )
        except ValueError as exc:
            raise DataError(f"clip '{pair.clip_id}': {exc}") from exc
        clip_dir = out / pair.clip_id
        (clip_dir / "enhanced").mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(enhanced):
            _save_png(frame, clip_dir / "enhanced" / f"{t:04d}.png")
            n_frames += 1
        if args.dump_decomposition:
            (clip_dir / "L").mkdir(exist_ok=True)
            (clip_dir / "R").mkdir(exist_ok=True)
            l_max = train_config.network.L_max
            for t, (lf, rf) in enumerate(zip(l_frames, r_frames)):
                # L is stored scaled by 1/L_max so the PNG keeps its full range
                _save_png(np.clip(lf / l_max, 0.0, 1.0), clip_dir / "L" / f"{t:04d}.png")
                _save_png(np.clip(rf, 0.0, 1.0), clip_dir / "R" / f"{t:04d}.png")

    _write_manifest(
        out,
        {
            "command": "enhance",
            "argv": sys.argv[1:],
            "version": __version__,
            "checkpoint": str(args.ckpt),
            "input": str(args.input),
            "dump_decomposition": bool(args.dump_decomposition),
            "inputs_hash": _hash_inputs([Path(args.ckpt), Path(args.input)]),
            "started": started,
            "finished": time.time(),
        },
    )
    print(f"enhanced {n_frames} frames from {len(dataset)} clips into {out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.time()
    out = Path(args.out)
    report = evaluate(args.ckpt, args.data, out, mode=args.mode)
    _write_manifest(
        out,
        {
            "command": "evaluate",
            "argv": sys.argv[1:],
            "version": __version__,
            "checkpoint": str(args.ckpt),
            "data": str(args.data),
            "mode": args.mode,
            "inputs_hash": _hash_inputs([Path(args.ckpt), Path(args.data)]),
            "started": started,
            "finished": time.time(),
        },
    )
    mean = report.mean
    print(
        f"evaluated {len(report.clips)} clips: "
        f"PSNR {mean['psnr']:.2f} dB, SSIM {mean['ssim']:.4f} "
        f"(report: {out / 'eval_report.json'})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lumisplit",
        description="Low-light video enhancement via view-dependent/view-independent decomposition.",
    )
    parser.add_argument("--version", action="version", version=f"lumisplit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="generate synthetic clip pairs with exact flow")
    p.add_argument("--source-images", default=None, help="directory of base images (default: procedural patterns)")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=1)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--size", default="64x64", help="frame size as WxH")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="train the decomposition network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--ablation", default="none", choices=ABLATIONS)
    p.add_argument("--perturb-px", type=float, default=None, dest="perturb_px")
    p.add_argument("--keep-fraction", type=float, default=None, dest="keep_fraction")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance clips with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-decomposition", action="store_true")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score a checkpoint against ground truth")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="output", choices=["output", "R_term"])
    p.set_defaults(func=cmd_evaluate)

    return parser


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: data: {_one_line(exc)}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"error: checkpoint: {_one_line(exc)}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ValueError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
