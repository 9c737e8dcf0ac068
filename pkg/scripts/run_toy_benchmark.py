#!/usr/bin/env python3
"""Run the calibrated toy benchmark once and print its summary.

Synthesizes the standard 16-train / 4-heldout dataset (unless --data-root
already holds one), trains for the full schedule, and reports the loss ratio
and held-out PSNR gain.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from lumisplit.benchmark import ABLATIONS, make_toy_dataset, run_toy_benchmark, toy_config


def ensure_datasets(data_root: Path) -> tuple[Path, Path]:
    train = data_root / "train"
    heldout = data_root / "heldout"
    if not (train / "train000" / "meta.json").exists():
        make_toy_dataset(train, 16, seed=100, prefix="train")
    if not (heldout / "held000" / "meta.json").exists():
        make_toy_dataset(heldout, 4, seed=200, prefix="held")
    return train, heldout


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", default="toy_data", help="where datasets live or get created")
    parser.add_argument("--out", default="toy_run")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=None, help="override the 2000-step schedule")
    parser.add_argument("--ablation", default="none", choices=ABLATIONS)
    parser.add_argument("--perturb-px", type=float, default=0.0, dest="perturb_px")
    parser.add_argument("--keep-fraction", type=float, default=1.0, dest="keep_fraction")
    args = parser.parse_args(argv)

    train, heldout = ensure_datasets(Path(args.data_root))
    config = toy_config(
        seed=args.seed,
        ablation=args.ablation,
        perturb_px=args.perturb_px,
        keep_fraction=args.keep_fraction,
    )
    if args.steps is not None:
        from dataclasses import replace

        config = replace(config, total_steps=args.steps)

    started = time.time()
    result = run_toy_benchmark(train, heldout, args.out, config)
    elapsed = time.time() - started

    summary = {
        "ablation": args.ablation,
        "seed": args.seed,
        "loss_ratio": round(result.loss_ratio, 4),
        "psnr_enhanced": round(result.psnr_enhanced, 2),
        "psnr_low_input": round(result.psnr_low_input, 2),
        "psnr_gain": round(result.psnr_enhanced - result.psnr_low_input, 2),
        "seconds": round(elapsed, 1),
        "checkpoint": str(result.ckpt),
    }
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
