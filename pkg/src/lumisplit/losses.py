"""Differentiable training objectives for the dual decomposition.

All functions take torch tensors shaped (3, H, W) (leading batch dims are fine
for the pointwise/stencil losses) and return 0-dim tensors, so gradients flow
to predictions and network parameters alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .correspondence import CorrespondenceSet

LOG_EPS = 1e-6  # added before the log so pure-black pixels stay finite
DEFAULT_DELTA = 1e-4


@dataclass
class DecompositionOutput:
    """Predicted view-dependent map L_hat in (0, L_max] and view-independent map R_hat in [0, 1]."""

    L_hat: torch.Tensor
    R_hat: torch.Tensor

    def __post_init__(self):
        if self.L_hat.shape != self.R_hat.shape:
            raise ValueError(f"L_hat/R_hat shapes differ: {tuple(self.L_hat.shape)} vs {tuple(self.R_hat.shape)}")


@dataclass
class SmoothnessWeights:
    """Edge-aware gradient penalties: v weights horizontal, w_y vertical differences."""

    v: torch.Tensor
    w_y: torch.Tensor


@dataclass
class LossReport:
    """One objective evaluation; total is composed exactly from the parts."""

    total: torch.Tensor
    rec_t1: torch.Tensor
    rec_t2: torch.Tensor
    smooth_t1: torch.Tensor
    smooth_t2: torch.Tensor
    consistency: torch.Tensor
    lambda1: float
    lambda2: float

    _FIELDS = ("total", "rec_t1", "rec_t2", "smooth_t1", "smooth_t2", "consistency")

    def to_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in self._FIELDS}


def _diff_x(t: torch.Tensor) -> torch.Tensor:
    """Forward difference along width; last column defined as 0."""
    return F.pad(t[..., :, 1:] - t[..., :, :-1], (0, 1))


def _diff_y(t: torch.Tensor) -> torch.Tensor:
    """Forward difference along height; last row defined as 0."""
    return F.pad(t[..., 1:, :] - t[..., :-1, :], (0, 0, 0, 1))


def reconstruction_loss(I_n: torch.Tensor, out: DecompositionOutput) -> torch.Tensor:
    """Mean L1 between the target frame and the composed product L_hat * R_hat."""
    if I_n.shape != out.L_hat.shape:
        raise ValueError(f"frame/prediction shapes differ: {tuple(I_n.shape)} vs {tuple(out.L_hat.shape)}")
    return (I_n - out.L_hat * out.R_hat).abs().mean()


def smoothness_weights(I_d: torch.Tensor, delta: float = DEFAULT_DELTA) -> SmoothnessWeights:
    """Reciprocal log-gradient weights of the degraded input.

    v = 1/(|dx log(I_d + 1e-6)| + delta), w_y likewise vertically; both peak
    at exactly 1/delta where the input is locally constant.
    """
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    U = torch.log(I_d + LOG_EPS)
    v = 1.0 / (_diff_x(U).abs() + delta)
    w_y = 1.0 / (_diff_y(U).abs() + delta)
    return SmoothnessWeights(v=v, w_y=w_y)


def illumination_smoothness_loss(L_hat: torch.Tensor, weights: SmoothnessWeights) -> torch.Tensor:
    """Mean of v * (dx L_hat)^2 + w_y * (dy L_hat)^2 over pixels and channels."""
    if L_hat.shape != weights.v.shape:
        raise ValueError(f"prediction/weight shapes differ: {tuple(L_hat.shape)} vs {tuple(weights.v.shape)}")
    return (weights.v * _diff_x(L_hat) ** 2 + weights.w_y * _diff_y(L_hat) ** 2).mean()


def bilinear_point_sample(img: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Sample img (C, H, W) at M float points; returns (M, C).

    Differentiable in the image values (the coordinates are treated as
    constants). Out-of-range points are clamped to the border.
    """
    if img.dim() != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {tuple(img.shape)}")
    _, h, w = img.shape
    x = x.to(img.device).clamp(0, w - 1)
    y = y.to(img.device).clamp(0, h - 1)
    x0 = x.floor().long()
    y0 = y.floor().long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    fx = (x - x0).to(img.dtype)
    fy = (y - y0).to(img.dtype)
    top = img[:, y0, x0] * (1 - fx) + img[:, y0, x1] * fx
    bot = img[:, y1, x0] * (1 - fx) + img[:, y1, x1] * fx
    return (top * (1 - fy) + bot * fy).transpose(0, 1)


def reflectance_consistency_loss(
    R1: torch.Tensor, R2: torch.Tensor, matches: CorrespondenceSet
) -> torch.Tensor:
    """Confidence-weighted mean absolute difference of R at matched points.

    mean over matches of u_m * mean_channel |R1(x1, y1) - R2(x2, y2)|, with
    bilinear sampling at subpixel coordinates.
    """
    if len(matches) == 0:
        raise ValueError("empty correspondence set; skip the term instead of calling")
    if R1.dim() != 3 or R1.shape != R2.shape:
        raise ValueError(f"expected matching (C, H, W) maps, got {tuple(R1.shape)} vs {tuple(R2.shape)}")
    x1 = torch.from_numpy(matches.x1).to(R1.dtype)
    y1 = torch.from_numpy(matches.y1).to(R1.dtype)
    x2 = torch.from_numpy(matches.x2).to(R1.dtype)
    y2 = torch.from_numpy(matches.y2).to(R1.dtype)
    u = torch.from_numpy(matches.u).to(device=R1.device, dtype=R1.dtype)
    s1 = bilinear_point_sample(R1, x1, y1)
    s2 = bilinear_point_sample(R2, x2, y2)
    per_match = (s1 - s2).abs().mean(dim=1)
    return (u * per_match).mean()


def total_objective(
    I_n_t1: torch.Tensor,
    I_n_t2: torch.Tensor,
    out_t1: DecompositionOutput,
    out_t2: DecompositionOutput,
    matches: CorrespondenceSet | None,
    I_d_t1: torch.Tensor,
    I_d_t2: torch.Tensor,
    lambda1: float = 0.1,
    lambda2: float = 0.05,
    *,
    use_consistency: bool = True,
    use_smoothness: bool = True,
    dual_supervision: bool = True,
) -> LossReport:
    """Combined objective over a frame pair.

    total = rec_t1 + rec_t2 + lambda1*(smooth_t1 + smooth_t2) + lambda2*consistency.
    Disabling dual supervision zeroes the t2 reconstruction and smoothness
    terms (the reference frame stops being directly supervised); disabled or
    unavailable terms are reported as 0. matches=None means the caller had no
    usable correspondences for this pair.
    """
    zero = torch.zeros((), dtype=I_n_t1.dtype, device=I_n_t1.device)

    rec_t1 = reconstruction_loss(I_n_t1, out_t1)
    rec_t2 = reconstruction_loss(I_n_t2, out_t2) if dual_supervision else zero

    if use_smoothness:
        smooth_t1 = illumination_smoothness_loss(out_t1.L_hat, smoothness_weights(I_d_t1))
        smooth_t2 = (
            illumination_smoothness_loss(out_t2.L_hat, smoothness_weights(I_d_t2))
            if dual_supervision
            else zero
        )
    else:
        smooth_t1 = zero
        smooth_t2 = zero

    if use_consistency and matches is not None and len(matches) > 0:
        consistency = reflectance_consistency_loss(out_t1.R_hat, out_t2.R_hat, matches)
    else:
        consistency = zero

    total = rec_t1 + rec_t2 + lambda1 * (smooth_t1 + smooth_t2) + lambda2 * consistency
    return LossReport(
        total=total,
        rec_t1=rec_t1,
        rec_t2=rec_t2,
        smooth_t1=smooth_t1,
        smooth_t2=smooth_t2,
        consistency=consistency,
        lambda1=lambda1,
        lambda2=lambda2,
    )


def average_reports(reports: list[LossReport]) -> LossReport:
    """Component-wise mean of reports; the total is recomposed from the means."""
    if not reports:
        raise ValueError("no reports to average")
    l1 = reports[0].lambda1
    l2 = reports[0].lambda2
    if any(r.lambda1 != l1 or r.lambda2 != l2 for r in reports):
        raise ValueError("cannot average reports with different loss weights")

    def mean_of(name: str) -> torch.Tensor:
        return torch.stack([getattr(r, name) for r in reports]).mean()

    rec_t1 = mean_of("rec_t1")
    rec_t2 = mean_of("rec_t2")
    smooth_t1 = mean_of("smooth_t1")
    smooth_t2 = mean_of("smooth_t2")
    consistency = mean_of("consistency")
    total = rec_t1 + rec_t2 + l1 * (smooth_t1 + smooth_t2) + l2 * consistency
    return LossReport(
        total=total,
        rec_t1=rec_t1,
        rec_t2=rec_t2,
        smooth_t1=smooth_t1,
        smooth_t2=smooth_t2,
        consistency=consistency,
        lambda1=l1,
        lambda2=l2,
    )
