"""Photometric, smoothness and pose losses, plus the stage objectives.

The two training stages combine their terms linearly:

    synthetic stage: total = a1 * distill + a2 * cost_volume + a3 * pose
    real stage:      total = a1 * consistent_depth + a2 * distribution
                             + a3 * cost_volume + a4 * pose

with published defaults all 1.0 for the synthetic stage and
(1.0, 0.01, 1.0, 1.0) for the real stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import KernelError, ShapeMismatchError

SYN_TERMS = ("distill", "cost_volume", "pose")
REAL_TERMS = ("consistent_depth", "distribution", "cost_volume", "pose")
DEFAULT_SYN_WEIGHTS = {"distill": 1.0, "cost_volume": 1.0, "pose": 1.0}
DEFAULT_REAL_WEIGHTS = {"consistent_depth": 1.0, "distribution": 0.01,
                        "cost_volume": 1.0, "pose": 1.0}
DEFAULT_LAMBDA_SSIM = 0.85

_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_BOX = np.ones((3, 3))


@dataclass(frozen=True)
class LossWeights:
    syn: dict = field(default_factory=lambda: dict(DEFAULT_SYN_WEIGHTS))
    real: dict = field(default_factory=lambda: dict(DEFAULT_REAL_WEIGHTS))
    lambda_ssim: float = DEFAULT_LAMBDA_SSIM

    def __post_init__(self):
        for stage, keys in (("syn", SYN_TERMS), ("real", REAL_TERMS)):
            w = getattr(self, stage)
            if set(w) != set(keys):
                raise KernelError(f"{stage} weights must have keys {keys}, got {sorted(w)}")
            if any(v < 0 or not np.isfinite(v) for v in w.values()):
                raise KernelError(f"{stage} weights must be finite and >= 0")
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise KernelError(f"lambda_ssim must lie in [0, 1], got {self.lambda_ssim}")


@dataclass
class LossReport:
    stage: str
    terms: dict
    weights: dict
    total: float

    def as_dict(self) -> dict:
        return {"stage": self.stage, "terms": dict(self.terms),
                "weights": dict(self.weights), "total": self.total}


def _as_image(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeMismatchError(f"{name} must be (C, H, W) or (H, W), got {arr.shape}")
    return arr


def _box_mean(x):
    # 3x3 window clipped at the borders, normalized by the in-bounds count
    total = ndimage.correlate(x, _BOX, mode="constant", cval=0.0)
    counts = ndimage.correlate(np.ones_like(x), _BOX, mode="constant", cval=0.0)
    return total / counts


def ssim_map(x, y):
    """Per-pixel structural similarity, 3x3 box window, unit-range constants."""
    mu_x = _box_mean(x)
    mu_y = _box_mean(y)
    sigma_x = _box_mean(x * x) - mu_x * mu_x
    sigma_y = _box_mean(y * y) - mu_y * mu_y
    sigma_xy = _box_mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * sigma_xy + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (sigma_x + sigma_y + _SSIM_C2)
    return num / den


def loss_photometric(target, warped, mask, lambda_ssim=DEFAULT_LAMBDA_SSIM) -> float:
    """Masked mix of structural dissimilarity and absolute difference.

    lambda * (1 - SSIM)/2 + (1 - lambda) * |target - warped|, channel-
    averaged, then averaged over mask-valid pixels only.
    """
    if not 0.0 <= lambda_ssim <= 1.0:
        raise KernelError(f"lambda_ssim must lie in [0, 1], got {lambda_ssim}")
    tgt = _as_image(target, "target")
    ref = _as_image(warped, "warped")
    if tgt.shape != ref.shape:
        raise ShapeMismatchError(f"target {tgt.shape} vs warped {ref.shape}")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != tgt.shape[1:]:
        raise ShapeMismatchError(f"mask {m.shape} vs image plane {tgt.shape[1:]}")
    valid = m > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise KernelError("photometric loss over an empty valid region")

    per_pixel = (1.0 - lambda_ssim) * np.abs(tgt - ref).mean(axis=0)
    if lambda_ssim > 0.0:
        dssim = np.stack([(1.0 - ssim_map(tgt[c], ref[c])) * 0.5
                          for c in range(tgt.shape[0])]).mean(axis=0)
        per_pixel = per_pixel + lambda_ssim * dssim
    return float(per_pixel[valid].sum() / n_valid)


def loss_smooth(depth, image) -> float:
    """Edge-aware first-order smoothness of mean-normalized disparity.

    Disparity gradients are down-weighted by exp(-|image gradient|),
    with the image gradient magnitude averaged over channels.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] < 2 or d.shape[1] < 2:
        raise KernelError(f"smoothness needs an (H>=2, W>=2) map, got {d.shape}")
    if (d <= 0).any():
        raise KernelError("depth must be positive")
    img = _as_image(image, "image")
    if img.shape[1:] != d.shape:
        raise ShapeMismatchError(f"image plane {img.shape[1:]} vs depth {d.shape}")

    disp = 1.0 / d
    disp = disp / disp.mean()
    grad_x = np.abs(disp[:, 1:] - disp[:, :-1])
    grad_y = np.abs(disp[1:, :] - disp[:-1, :])
    weight_x = np.exp(-np.abs(img[:, :, 1:] - img[:, :, :-1]).mean(axis=0))
    weight_y = np.exp(-np.abs(img[:, 1:, :] - img[:, :-1, :]).mean(axis=0))
    return float((grad_x * weight_x).mean() + (grad_y * weight_y).mean())


def loss_pose(theta_a, trans_a, theta_b, trans_b, squared=False) -> dict:
    """Rotation-vector and translation distances between two poses.

    Euclidean norms by default ({theta, trans, total}); `squared`
    switches both components to squared norms for ablations.
    """
    ta = np.asarray(theta_a, dtype=np.float64).reshape(3)
    tb = np.asarray(theta_b, dtype=np.float64).reshape(3)
    ra = np.asarray(trans_a, dtype=np.float64).reshape(3)
    rb = np.asarray(trans_b, dtype=np.float64).reshape(3)
    if not all(np.isfinite(v).all() for v in (ta, tb, ra, rb)):
        raise KernelError("pose loss inputs must be finite")
    l_theta = float(np.linalg.norm(ta - tb))
    l_trans = float(np.linalg.norm(ra - rb))
    if squared:
        l_theta *= l_theta
        l_trans *= l_trans
    return {"theta": l_theta, "trans": l_trans, "total": l_theta + l_trans}


def _assemble(stage, term_names, terms, weights):
    if set(terms) != set(term_names):
        raise KernelError(f"{stage} terms must have keys {term_names}, got {sorted(terms)}")
    for name, value in terms.items():
        if not np.isfinite(value):
            raise KernelError(f"term {name!r} is not finite: {value}")
    for name, value in weights.items():
        if value < 0 or not np.isfinite(value):
            raise KernelError(f"weight {name!r} must be finite and >= 0: {value}")
    total = math.fsum(weights[k] * terms[k] for k in term_names)
    return LossReport(stage, {k: float(terms[k]) for k in term_names},
                      {k: float(weights[k]) for k in term_names}, total)


def assemble_syn(terms, weights=None) -> LossReport:
    """Synthetic-stage objective: weighted sum of distill/cost_volume/pose."""
    return _assemble("syn", SYN_TERMS, terms,
                     DEFAULT_SYN_WEIGHTS if weights is None else weights)


def assemble_real(terms, weights=None) -> LossReport:
    """Real-stage objective: weighted sum of consistent_depth/distribution/
    cost_volume/pose, default weights (1.0, 0.01, 1.0, 1.0)."""
    return _assemble("real", REAL_TERMS, terms,
                     DEFAULT_REAL_WEIGHTS if weights is None else weights)
