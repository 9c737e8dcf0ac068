"""Dual-frame training loop: reference sampling, cosine schedule, checkpoints.

Determinism contract: one numpy Generator seeded from the config drives every
sampling decision (clip, frame pair, crops), and its bit-generator state is
checkpointed, so resuming reproduces the interrupted run bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .correspondence import CorrespondenceSet, correspondences_for_pair, load_external, perturb, reduce
from .data import ClipPair, load_dataset
from .errors import CheckpointError, DataError
from .losses import DecompositionOutput, LossReport, average_reports, total_objective
from .model import DualDecompositionNet, NetworkConfig
from .tensors import to_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
CORRESPONDENCE_SOURCES = ("oracle", "external")


@dataclass
class TrainConfig:
    lr_base: float = 4e-4
    batch_size: int = 4
    total_steps: int = 2000
    clip_length: int = 5
    lambda1: float = 0.1
    lambda2: float = 0.05
    use_consistency: bool = True
    use_smoothness: bool = True
    use_cfim: bool = True
    dual_supervision: bool = True
    seed: int = 0
    correspondence_source: str = "oracle"
    perturb_px: float = 0.0
    keep_fraction: float = 1.0
    crop: int = 64
    match_stride: int = 4
    checkpoint_every: int = 500
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.lr_base <= 0:
            raise ValueError(f"lr_base must be > 0, got {self.lr_base}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.clip_length < 2:
            raise ValueError(f"clip_length must be >= 2, got {self.clip_length}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.correspondence_source not in CORRESPONDENCE_SOURCES:
            raise ValueError(
                f"correspondence_source must be one of {CORRESPONDENCE_SOURCES}, "
                f"got '{self.correspondence_source}'"
            )
        if self.perturb_px < 0:
            raise ValueError(f"perturb_px must be >= 0, got {self.perturb_px}")
        if not (0.0 < self.keep_fraction <= 1.0):
            raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if self.match_stride < 1:
            raise ValueError(f"match_stride must be >= 1, got {self.match_stride}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        div = 2**self.network.depth
        if self.crop < div or self.crop % div:
            raise ValueError(f"crop must be a positive multiple of 2^depth = {div}, got {self.crop}")


_NETWORK_KEYS = {"base_channels": int, "depth": int, "attention_scaled": bool, "l_max": float}


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    net = d.pop("network", {})
    return TrainConfig(network=NetworkConfig(**net), **d)


def parse_config_file(path: Path | str) -> TrainConfig:
    """key=value config (# comments); unknown keys are fatal, named in the error."""
    p = Path(path)
    if not p.exists():
        raise ValueError(f"config file not found: {p}")
    train_fields = {f.name for f in TrainConfig.__dataclass_fields__.values()} - {"network"}
    kw: dict = {}
    net_kw: dict = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{p}:{lineno}: expected key=value, got '{line}'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw.strip("\"'")
        if key in train_fields:
            kw[key] = value
        elif key in _NETWORK_KEYS:
            net_kw["L_max" if key == "l_max" else key] = value
        else:
            raise ValueError(f"{p}:{lineno}: unknown config key: {key}")
    try:
        return TrainConfig(network=NetworkConfig(**net_kw), **kw)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid config {p}: {exc}") from exc


def sample_reference(t1: int, T: int, rng: np.random.Generator) -> int:
    """Uniform draw from the +-2 temporal neighborhood of t1, excluding t1."""
    if T < 2:
        raise ValueError(f"need at least 2 frames, got T={T}")
    if not 0 <= t1 < T:
        raise ValueError(f"t1={t1} outside clip of length {T}")
    window = [t for t in range(max(0, t1 - 2), min(T - 1, t1 + 2) + 1) if t != t1]
    return window[int(rng.integers(len(window)))]


def cosine_lr(step: int, total_steps: int, lr_base: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_base * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TrainSample:
    """One cropped frame pair ready for the objective."""

    clip_id: str
    t1: int
    t2: int
    low_t1: np.ndarray
    low_t2: np.ndarray
    normal_t1: np.ndarray
    normal_t2: np.ndarray
    matches: CorrespondenceSet | None


def _pair_seed(base_seed: int, clip_idx: int, t1: int, t2: int, salt: int) -> int:
    # stable per (config seed, clip, pair): match corruption is a property of
    # the data, not resampled every step
    return (base_seed * 1_000_003 + clip_idx * 8191 + t1 * 131 + t2 * 17 + salt) % 2**32


class Trainer:
    """Owns the model, optimizer, and the single rng that drives sampling."""

    def __init__(
        self,
        config: TrainConfig,
        dataset: list[ClipPair],
        external_matches: dict[str, dict[tuple[int, int], CorrespondenceSet]] | None = None,
    ):
        if not dataset:
            raise DataError("empty dataset")
        for pair in dataset:
            if len(pair.normal) != config.clip_length:
                raise DataError(
                    f"clip '{pair.clip_id}' has {len(pair.normal)} frames, "
                    f"config expects clip_length={config.clip_length}"
                )
        self.config = config
        self.dataset = dataset
        self.external_matches = external_matches or {}
        if config.correspondence_source == "external" and not self.external_matches:
            raise DataError("correspondence_source=external but no match files were provided")
        torch.manual_seed(config.seed)
        self.model = DualDecompositionNet(config.network)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.lr_base)
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self._match_cache: dict[tuple[int, int, int], CorrespondenceSet | None] = {}

    # -- correspondence plumbing -------------------------------------------

    def _matches_for(self, clip_idx: int, t1: int, t2: int) -> CorrespondenceSet | None:
        key = (clip_idx, t1, t2)
        if key in self._match_cache:
            return self._match_cache[key]
        pair = self.dataset[clip_idx]
        cfg = self.config
        if cfg.correspondence_source == "oracle":
            try:
                cset = correspondences_for_pair(pair, t1, t2, cfg.match_stride)
            except ValueError:
                cset = None
        else:
            cset = self.external_matches.get(pair.clip_id, {}).get((t1, t2))
            if cset is not None and len(cset) == 0:
                cset = None
        if cset is not None:
            h, w = pair.normal.shape
            if cfg.perturb_px > 0:
                cset = perturb(cset, cfg.perturb_px, _pair_seed(cfg.seed, clip_idx, t1, t2, 1), (h, w))
            if cfg.keep_fraction < 1.0:
                cset = reduce(cset, cfg.keep_fraction, _pair_seed(cfg.seed, clip_idx, t1, t2, 2))
        self._match_cache[key] = cset
        return cset

    # -- sampling -----------------------------------------------------------

    def _crop_sample(
        self, pair: ClipPair, t1: int, t2: int, matches: CorrespondenceSet | None
    ) -> tuple[tuple[int, int], CorrespondenceSet | None]:
        h, w = pair.normal.shape
        cs = self.config.crop
        if cs > h or cs > w:
            raise DataError(
                f"clip '{pair.clip_id}' frames ({h}x{w}) smaller than crop size {cs}"
            )

        def crop_matches(oy: int, ox: int) -> CorrespondenceSet | None:
            if matches is None:
                return None
            inside = (
                (matches.x1 >= ox) & (matches.x1 <= ox + cs - 1)
                & (matches.y1 >= oy) & (matches.y1 <= oy + cs - 1)
                & (matches.x2 >= ox) & (matches.x2 <= ox + cs - 1)
                & (matches.y2 >= oy) & (matches.y2 <= oy + cs - 1)
            )
            if not inside.any():
                return None
            return CorrespondenceSet(
                t1=matches.t1,
                t2=matches.t2,
                x1=matches.x1[inside] - ox,
                y1=matches.y1[inside] - oy,
                x2=matches.x2[inside] - ox,
                y2=matches.y2[inside] - oy,
                u=matches.u[inside],
                source=matches.source,
            )

        if h == cs and w == cs:
            return (0, 0), crop_matches(0, 0)
        for _ in range(10):
            oy = int(self.rng.integers(0, h - cs + 1))
            ox = int(self.rng.integers(0, w - cs + 1))
            cropped = crop_matches(oy, ox)
            if cropped is not None:
                return (oy, ox), cropped
        return (oy, ox), None

    def sample_batch(self) -> list[TrainSample]:
        cfg = self.config
        batch = []
        for _ in range(cfg.batch_size):
            clip_idx = int(self.rng.integers(len(self.dataset)))
            pair = self.dataset[clip_idx]
            T = len(pair.normal)
            t1 = int(self.rng.integers(T))
            t2 = sample_reference(t1, T, self.rng)
            matches = self._matches_for(clip_idx, t1, t2)
            (oy, ox), cropped = self._crop_sample(pair, t1, t2, matches)
            if cropped is None and cfg.use_consistency:
                logger.warning(
                    "no usable correspondences for clip '%s' pair (%d, %d); "
                    "consistency term skipped this sample",
                    pair.clip_id, t1, t2,
                )
            cs = cfg.crop
            sl = (slice(oy, oy + cs), slice(ox, ox + cs))
            batch.append(
                TrainSample(
                    clip_id=pair.clip_id,
                    t1=t1,
                    t2=t2,
                    low_t1=pair.low.frames[t1][sl],
                    low_t2=pair.low.frames[t2][sl],
                    normal_t1=pair.normal.frames[t1][sl],
                    normal_t2=pair.normal.frames[t2][sl],
                    matches=cropped,
                )
            )
        return batch

    # -- optimization --------------------------------------------------------

    def train_step(self, batch: list[TrainSample] | None = None) -> LossReport:
        """One optimizer update on a (possibly freshly sampled) batch."""
        cfg = self.config
        if batch is None:
            batch = self.sample_batch()
        lr = cosine_lr(self.step, cfg.total_steps, cfg.lr_base)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        d1 = torch.stack([to_tensor(s.low_t1) for s in batch])
        d2 = torch.stack([to_tensor(s.low_t2) for s in batch])
        n1 = torch.stack([to_tensor(s.normal_t1) for s in batch])
        n2 = torch.stack([to_tensor(s.normal_t2) for s in batch])

        self.optimizer.zero_grad()
        out1, out2 = self.model.forward_dual(d1, d2, use_cfim=cfg.use_cfim)
        reports = []
        for b, sample in enumerate(batch):
            reports.append(
                total_objective(
                    n1[b], n2[b],
                    DecompositionOutput(out1.L_hat[b], out1.R_hat[b]),
                    DecompositionOutput(out2.L_hat[b], out2.R_hat[b]),
                    sample.matches,
                    d1[b], d2[b],
                    cfg.lambda1, cfg.lambda2,
                    use_consistency=cfg.use_consistency,
                    use_smoothness=cfg.use_smoothness,
                    dual_supervision=cfg.dual_supervision,
                )
            )
        torch.stack([r.total for r in reports]).mean().backward()
        self.optimizer.step()
        self.step += 1
        avg = average_reports(reports)
        return LossReport(
            total=avg.total.detach(),
            rec_t1=avg.rec_t1.detach(),
            rec_t2=avg.rec_t2.detach(),
            smooth_t1=avg.smooth_t1.detach(),
            smooth_t2=avg.smooth_t2.detach(),
            consistency=avg.consistency.detach(),
            lambda1=avg.lambda1,
            lambda2=avg.lambda2,
        )

    # -- checkpointing --------------------------------------------------------

    def save(self, path: Path | str) -> None:
        torch.save(
            {
                "format_version": CHECKPOINT_FORMAT_VERSION,
                "step": self.step,
                "model_state": self.model.state_dict(),
                "optimizer_state": self.optimizer.state_dict(),
                "train_config": config_to_dict(self.config),
                "numpy_rng_state": self.rng.bit_generator.state,
                "torch_rng_state": torch.get_rng_state(),
            },
            path,
        )

    @classmethod
    def from_checkpoint(
        cls,
        path: Path | str,
        dataset: list[ClipPair],
        external_matches: dict[str, dict[tuple[int, int], CorrespondenceSet]] | None = None,
    ) -> "Trainer":
        blob = load_checkpoint(path)
        config = config_from_dict(blob["train_config"])
        trainer = cls(config, dataset, external_matches)
        try:
            trainer.model.load_state_dict(blob["model_state"])
            trainer.optimizer.load_state_dict(blob["optimizer_state"])
        except (RuntimeError, ValueError, KeyError) as exc:
            raise CheckpointError(f"checkpoint {path} incompatible with its config: {exc}") from exc
        trainer.rng.bit_generator.state = blob["numpy_rng_state"]
        torch.set_rng_state(blob["torch_rng_state"])
        trainer.step = blob["step"]
        return trainer


def load_checkpoint(path: Path | str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    try:
        blob = torch.load(p, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {p}: {exc}") from exc
    if not isinstance(blob, dict) or "format_version" not in blob:
        raise CheckpointError(f"not a training checkpoint: {p}")
    if blob["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {p} has format version {blob['format_version']}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    return blob


def load_model_for_eval(path: Path | str) -> tuple[DualDecompositionNet, TrainConfig]:
    """Rebuild the network from a checkpoint, in eval mode."""
    blob = load_checkpoint(path)
    config = config_from_dict(blob["train_config"])
    model = DualDecompositionNet(config.network)
    try:
        model.load_state_dict(blob["model_state"])
    except (RuntimeError, ValueError, KeyError) as exc:
        raise CheckpointError(f"checkpoint {path} incompatible with its config: {exc}") from exc
    model.eval()
    return model, config


def load_external_matches(
    dataset_path: Path | str, dataset: list[ClipPair]
) -> dict[str, dict[tuple[int, int], CorrespondenceSet]]:
    """One matches_<clip_id>.jsonl per clip, from the dataset root."""
    root = Path(dataset_path)
    out = {}
    for pair in dataset:
        match_file = root / f"matches_{pair.clip_id}.jsonl"
        if not match_file.exists():
            raise DataError(f"missing external match file: {match_file}")
        csets, report = load_external(match_file, frame_shape=pair.normal.shape)
        if report.n_dropped_out_of_bounds:
            logger.warning(
                "%s: dropped %d out-of-bounds matches", match_file, report.n_dropped_out_of_bounds
            )
        out[pair.clip_id] = csets
    return out


def _checkpoint_steps(out_dir: Path) -> list[tuple[int, Path]]:
    found = []
    for p in out_dir.glob("ckpt_*.bin"):
        m = re.fullmatch(r"ckpt_(\d+)\.bin", p.name)
        if m:
            found.append((int(m.group(1)), p))
    return sorted(found)


def fit(
    config: TrainConfig,
    dataset_path: Path | str,
    out_dir: Path | str,
    resume: bool = False,
) -> Path:
    """Run the full schedule; returns the final checkpoint path.

    Writes train_log.jsonl (one line per step) and ckpt_<step>.bin snapshots
    every checkpoint_every steps plus at the end. With resume=True the latest
    checkpoint in out_dir is picked up and the log is truncated to match.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(dataset_path)
    external = None
    if config.correspondence_source == "external":
        external = load_external_matches(dataset_path, dataset)

    log_path = out / "train_log.jsonl"
    existing = _checkpoint_steps(out)
    if resume and existing:
        step0, ckpt_path = existing[-1]
        trainer = Trainer.from_checkpoint(ckpt_path, dataset, external)
        logger.info("resuming from %s at step %d", ckpt_path, trainer.step)
        if log_path.exists():
            kept = [
                line
                for line in log_path.read_text().splitlines()
                if line.strip() and json.loads(line)["step"] <= trainer.step
            ]
            log_path.write_text("".join(l + "\n" for l in kept))
        config = trainer.config
    else:
        trainer = Trainer(config, dataset, external)
        log_path.write_text("")

    with open(log_path, "a") as log:
        while trainer.step < config.total_steps:
            lr = cosine_lr(trainer.step, config.total_steps, config.lr_base)
            report = trainer.train_step()
            entry = {"step": trainer.step, "lr": lr, **report.to_floats()}
            log.write(json.dumps(entry) + "\n")
            if trainer.step % config.checkpoint_every == 0 or trainer.step == config.total_steps:
                trainer.save(out / f"ckpt_{trainer.step}.bin")

    final = out / f"ckpt_{config.total_steps}.bin"
    if not final.exists():
        trainer.save(final)
    return final
