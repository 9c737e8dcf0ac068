"""Cross-frame pixel correspondences with confidence weights.

For synthetic clips the matches come from exact flow (an oracle); externally
computed matches can be loaded from JSON-lines files. Weights are confidences
in [0, 1], higher = more trusted.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import ClipPair, FlowField, compose_flow_chain
from .errors import DataError


@dataclass
class CorrespondenceSet:
    """Matches between one frame pair: frame t1 point (x1, y1) <-> frame t2 point (x2, y2)."""

    t1: int
    t2: int
    x1: np.ndarray
    y1: np.ndarray
    x2: np.ndarray
    y2: np.ndarray
    u: np.ndarray  # confidence weight per match, in [0, 1]
    source: str = "oracle"  # oracle | external | perturbed | reduced

    def __post_init__(self):
        if self.t1 == self.t2:
            raise ValueError(f"degenerate frame pair ({self.t1}, {self.t2})")
        n = len(self.x1)
        for name in ("y1", "x2", "y2", "u"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"field {name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.x1)


@dataclass
class LoadReport:
    """What happened while parsing an external match file."""

    n_lines: int = 0
    n_loaded: int = 0
    n_dropped_out_of_bounds: int = 0
    n_clamped_weights: int = 0
    warnings: list[str] = field(default_factory=list)


def correspondences_from_flow(flow: FlowField, stride: int, t1: int, t2: int) -> CorrespondenceSet:
    """Grid-sample matches every `stride` pixels wherever the flow is valid."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    h, w = flow.shape
    ys, xs = np.mgrid[0:h:stride, 0:w:stride]
    xs = xs.reshape(-1)
    ys = ys.reshape(-1)
    keep = flow.valid_mask[ys, xs]
    xs, ys = xs[keep], ys[keep]
    x2 = xs + flow.displacement[ys, xs, 0].astype(np.float64)
    y2 = ys + flow.displacement[ys, xs, 1].astype(np.float64)
    # belt and braces: the mask should already encode this
    inb = (x2 >= 0) & (x2 <= w - 1) & (y2 >= 0) & (y2 <= h - 1)
    xs, ys, x2, y2 = xs[inb], ys[inb], x2[inb], y2[inb]
    if len(xs) == 0:
        raise ValueError(f"flow for pair ({t1}, {t2}) has no valid grid points at stride {stride}")
    return CorrespondenceSet(
        t1=t1,
        t2=t2,
        x1=xs.astype(np.float64),
        y1=ys.astype(np.float64),
        x2=x2,
        y2=y2,
        u=np.ones(len(xs), dtype=np.float64),
        source="oracle",
    )


def correspondences_for_pair(pair: ClipPair, t1: int, t2: int, stride: int) -> CorrespondenceSet:
    """Oracle matches for an arbitrary frame pair of a synthetic clip.

    Stored flows are consecutive and forward; longer spans are composed. For
    t2 < t1 the forward matches t2 -> t1 are built and the endpoints swapped
    (the match relation is symmetric).
    """
    if t1 == t2:
        raise ValueError("t1 and t2 must differ")
    a, b = (t1, t2) if t1 < t2 else (t2, t1)
    if a < 0 or b > len(pair.normal) - 1:
        raise ValueError(f"frame pair ({t1}, {t2}) outside clip of length {len(pair.normal)}")
    flow = compose_flow_chain(pair.flows[a:b])
    cset = correspondences_from_flow(flow, stride, a, b)
    if t1 < t2:
        return cset
    return CorrespondenceSet(
        t1=t1, t2=t2, x1=cset.x2, y1=cset.y2, x2=cset.x1, y2=cset.y1, u=cset.u, source="oracle"
    )


def perturb(
    cset: CorrespondenceSet,
    max_offset_px: float,
    rng_seed: int,
    frame_shape: tuple[int, int],
) -> CorrespondenceSet:
    """Add independent uniform offsets in [-max_offset_px, +max_offset_px] to (x2, y2).

    Offsets are clamped to image bounds afterwards. Deterministic per seed.
    """
    if max_offset_px < 0:
        raise ValueError(f"max_offset_px must be >= 0, got {max_offset_px}")
    h, w = frame_shape
    rng = np.random.default_rng(rng_seed)
    m = len(cset)
    dx = rng.uniform(-max_offset_px, max_offset_px, size=m)
    dy = rng.uniform(-max_offset_px, max_offset_px, size=m)
    return replace(
        cset,
        x2=np.clip(cset.x2 + dx, 0.0, w - 1.0),
        y2=np.clip(cset.y2 + dy, 0.0, h - 1.0),
        source="perturbed",
    )


def reduce(cset: CorrespondenceSet, keep_fraction: float, rng_seed: int) -> CorrespondenceSet:
    """Subsample without replacement, keeping ceil(keep_fraction * M) matches."""
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    m = len(cset)
    k = math.ceil(keep_fraction * m)
    rng = np.random.default_rng(rng_seed)
    idx = np.sort(rng.choice(m, size=k, replace=False))
    return replace(
        cset,
        x1=cset.x1[idx],
        y1=cset.y1[idx],
        x2=cset.x2[idx],
        y2=cset.y2[idx],
        u=cset.u[idx],
        source="reduced",
    )


def save_matches(csets: list[CorrespondenceSet], path: Path | str) -> None:
    """Write matches as JSON lines: {"t1","t2","x1","y1","x2","y2","u"} per match."""
    with open(path, "w") as f:
        for cset in csets:
            for i in range(len(cset)):
                f.write(
                    json.dumps(
                        {
                            "t1": cset.t1,
                            "t2": cset.t2,
                            "x1": float(cset.x1[i]),
                            "y1": float(cset.y1[i]),
                            "x2": float(cset.x2[i]),
                            "y2": float(cset.y2[i]),
                            "u": float(cset.u[i]),
                        }
                    )
                    + "\n"
                )


_REQUIRED_KEYS = ("t1", "t2", "x1", "y1", "x2", "y2", "u")


def load_external(
    path: Path | str,
    frame_shape: tuple[int, int] | None = None,
) -> tuple[dict[tuple[int, int], CorrespondenceSet], LoadReport]:
    """Parse a JSON-lines match file, grouped by (t1, t2) frame pair.

    Rows with out-of-bounds coordinates are dropped and counted; weights
    outside [0, 1] are clamped and counted. A syntactically malformed line is
    an error (with its line number), not a droppable row. An empty file
    yields an empty dict with a warning.
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"match file not found: {p}")
    report = LoadReport()
    buckets: dict[tuple[int, int], list[tuple[float, float, float, float, float]]] = {}
    with open(p) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            report.n_lines += 1
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{p}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(row, dict) or any(k not in row for k in _REQUIRED_KEYS):
                missing = [k for k in _REQUIRED_KEYS if not isinstance(row, dict) or k not in row]
                raise DataError(f"{p}:{lineno}: missing keys {missing}")
            try:
                t1, t2 = int(row["t1"]), int(row["t2"])
                vals = [float(row[k]) for k in ("x1", "y1", "x2", "y2", "u")]
            except (TypeError, ValueError) as exc:
                raise DataError(f"{p}:{lineno}: non-numeric field: {exc}") from exc
            if t1 == t2:
                raise DataError(f"{p}:{lineno}: t1 == t2 == {t1}")
            x1, y1, x2, y2, u = vals
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{p}:{lineno}: non-finite value")
            oob = x1 < 0 or y1 < 0 or x2 < 0 or y2 < 0
            if frame_shape is not None:
                hh, ww = frame_shape
                oob = oob or max(x1, x2) > ww - 1 or max(y1, y2) > hh - 1
            if oob:
                report.n_dropped_out_of_bounds += 1
                continue
            if u < 0.0 or u > 1.0:
                u = min(max(u, 0.0), 1.0)
                report.n_clamped_weights += 1
            buckets.setdefault((t1, t2), []).append((x1, y1, x2, y2, u))
            report.n_loaded += 1

    if report.n_lines == 0:
        msg = f"match file {p} is empty"
        report.warnings.append(msg)
        warnings.warn(msg)

    out = {}
    for (t1, t2), rows in buckets.items():
        arr = np.asarray(rows, dtype=np.float64)
        out[(t1, t2)] = CorrespondenceSet(
            t1=t1, t2=t2, x1=arr[:, 0], y1=arr[:, 1], x2=arr[:, 2], y2=arr[:, 3], u=arr[:, 4],
            source="external",
        )
    return out, report
