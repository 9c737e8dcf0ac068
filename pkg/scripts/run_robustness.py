#!/usr/bin/env python3
"""Probe robustness to corrupted correspondences.

Trains a clean baseline, a run with match endpoints perturbed by up to 20 px,
and a run keeping only 10% of matches, then reports the held-out PSNR deltas.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from lumisplit.benchmark import run_toy_benchmark, toy_config
from run_toy_benchmark import ensure_datasets


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", default="toy_data")
    parser.add_argument("--out", default="robustness_runs")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--perturb-px", type=float, default=20.0, dest="perturb_px")
    parser.add_argument("--keep-fraction", type=float, default=0.1, dest="keep_fraction")
    args = parser.parse_args(argv)

    train, heldout = ensure_datasets(Path(args.data_root))
    out = Path(args.out)

    variants = {
        "baseline": toy_config(seed=args.seed),
        f"perturb{args.perturb_px:g}px": toy_config(seed=args.seed, perturb_px=args.perturb_px),
        f"keep{args.keep_fraction:g}": toy_config(seed=args.seed, keep_fraction=args.keep_fraction),
    }

    scores = {}
    for tag, config in variants.items():
        if args.steps is not None:
            config = replace(config, total_steps=args.steps)
        result = run_toy_benchmark(train, heldout, out / tag, config)
        scores[tag] = result.psnr_enhanced
        print(f"{tag}: held-out PSNR {result.psnr_enhanced:.2f} dB", flush=True)

    base = scores.pop("baseline")
    print(f"\nbaseline {base:.2f} dB")
    for tag, value in scores.items():
        print(f"{tag}: {value:.2f} dB ({value - base:+.2f} dB vs baseline)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
