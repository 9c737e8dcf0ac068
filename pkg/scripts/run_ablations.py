#!/usr/bin/env python3
"""Train the full model and every ablation across seeds; print a PSNR table.

The comparison of interest: does dropping the consistency loss, the smoothness
loss, the cross-frame module, or dual supervision hurt held-out quality?
"""

import argparse
import sys
from pathlib import Path

from lumisplit.benchmark import ABLATIONS, run_toy_benchmark, toy_config
from run_toy_benchmark import ensure_datasets


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-root", default="toy_data")
    parser.add_argument("--out", default="ablation_runs")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--steps", type=int, default=None)
    args = parser.parse_args(argv)

    train, heldout = ensure_datasets(Path(args.data_root))
    out = Path(args.out)

    results: dict[tuple[str, int], float] = {}
    for ablation in ABLATIONS:
        for seed in args.seeds:
            config = toy_config(seed=seed, ablation=ablation)
            if args.steps is not None:
                from dataclasses import replace

                config = replace(config, total_steps=args.steps)
            tag = f"{ablation}_s{seed}"
            result = run_toy_benchmark(train, heldout, out / tag, config)
            results[(ablation, seed)] = result.psnr_enhanced
            print(f"{tag}: held-out PSNR {result.psnr_enhanced:.2f} dB", flush=True)

    print()
    header = "variant      " + "".join(f"  seed {s:>2}" for s in args.seeds) + "     mean"
    print(header)
    print("-" * len(header))
    for ablation in ABLATIONS:
        row = [results[(ablation, s)] for s in args.seeds]
        cells = "".join(f"  {v:7.2f}" for v in row)
        print(f"{ablation:<13}{cells}  {sum(row) / len(row):7.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
