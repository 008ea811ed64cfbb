"""Plane-sweep cost volumes and the cost-volume distillation loss.

A cost volume stacks one (H, W) slice per depth candidate. Slice i
scores, per pixel, how well the previous frame warped at candidate
depth d_i agrees with the current frame:

* difference mode: channel-mean absolute feature difference (>= 0,
  smaller is better);
* dot mode: dot product of the L2-normalized channel vectors, i.e.
  cosine similarity in [-1, 1] (larger is better). `normalize=False`
  keeps the raw dot product.

Pixels whose warp left the image receive the worst possible cost so
argmin/argmax and losses stay deterministic: DIFF_INVALID_COST in
difference mode, DOT_INVALID_COST in dot mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError, ShapeMismatchError
from .geometry import Intrinsics, Pose, warp

DEFAULT_DEPTH_RANGE = (3.5, 80.0)
DIFF_INVALID_COST = 1.0e4
DOT_INVALID_COST = -1.0


@dataclass(frozen=True, eq=False)
class DepthCandidates:
    """Strictly increasing positive depth hypotheses (meters)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1).copy()
        if vals.size < 1 or not np.isfinite(vals).all():
            raise KernelError("candidates must be a finite, non-empty list")
        if (vals <= 0).any() or (np.diff(vals) <= 0).any():
            raise KernelError("candidates must be positive and strictly increasing")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    @classmethod
    def inverse_depth(cls, lo=DEFAULT_DEPTH_RANGE[0], hi=DEFAULT_DEPTH_RANGE[1], num=32):
        """Candidates uniform in 1/depth over [lo, hi] (plane-sweep default)."""
        if not (0 < lo < hi) or num < 2:
            raise KernelError(f"bad candidate range lo={lo} hi={hi} num={num}")
        inv = np.linspace(1.0 / lo, 1.0 / hi, num)
        return cls(1.0 / inv)

    @classmethod
    def uniform(cls, lo=DEFAULT_DEPTH_RANGE[0], hi=DEFAULT_DEPTH_RANGE[1], num=32):
        """Candidates uniform in depth over [lo, hi]."""
        if not (0 < lo < hi) or num < 2:
            raise KernelError(f"bad candidate range lo={lo} hi={hi} num={num}")
        return cls(np.linspace(lo, hi, num))


@dataclass(eq=False)
class CostVolume:
    volume: np.ndarray            # (D, H, W) float32
    candidates: DepthCandidates
    mode: str                     # "difference" | "dot"

    def __post_init__(self):
        if self.mode not in ("difference", "dot"):
            raise KernelError(f"unknown cost volume mode {self.mode!r}")
        vol = np.ascontiguousarray(self.volume, dtype=np.float32)
        if vol.ndim != 3:
            raise ShapeMismatchError(f"cost volume must be (D, H, W), got {vol.shape}")
        if vol.shape[0] != len(self.candidates):
            raise ShapeMismatchError(
                f"{vol.shape[0]} slices vs {len(self.candidates)} candidates")
        self.volume = vol


def _check_features(feat_t, feat_prev):
    a = np.asarray(feat_t, dtype=np.float32)
    b = np.asarray(feat_prev, dtype=np.float32)
    if a.ndim == 2:
        a = a[None]
    if b.ndim == 2:
        b = b[None]
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeMismatchError("features must be (C, H, W)")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"feature shapes differ: {a.shape} vs {b.shape}")
    return a, b


def build_cost_volume(feat_t, feat_prev, pose: Pose, candidates: DepthCandidates,
                      intrinsics: Intrinsics, mode="difference",
                      normalize=True) -> CostVolume:
    """Sweep the previous frame's features over the depth candidates.

    For each candidate d_i the previous features are warped to the
    target grid assuming a fronto-parallel plane at d_i, then scored
    against the current features (see module docstring for modes).
    """
    feat_t, feat_prev = _check_features(feat_t, feat_prev)
    if len(candidates) < 2:
        raise KernelError("plane sweep needs at least 2 depth candidates")
    _, height, width = feat_t.shape
    cur = feat_t.astype(np.float64)
    if mode == "dot" and normalize:
        cur_norm = np.linalg.norm(cur, axis=0)
        cur = np.divide(cur, cur_norm, out=np.zeros_like(cur), where=cur_norm > 0)

    slices = np.empty((len(candidates), height, width), dtype=np.float32)
    for i, d in enumerate(candidates.values):
        warped, mask = warp(feat_prev, pose, float(d), intrinsics)
        ref = warped.astype(np.float64)
        invalid = mask == 0
        if mode == "difference":
            cost = np.abs(feat_t.astype(np.float64) - ref).mean(axis=0)
            cost[invalid] = DIFF_INVALID_COST
        elif mode == "dot":
            if normalize:
                ref_norm = np.linalg.norm(ref, axis=0)
                ref = np.divide(ref, ref_norm, out=np.zeros_like(ref), where=ref_norm > 0)
            cost = np.einsum("chw,chw->hw", cur, ref)
            cost[invalid] = DOT_INVALID_COST
        else:
            raise KernelError(f"unknown cost volume mode {mode!r}")
        slices[i] = cost.astype(np.float32)
    return CostVolume(slices, candidates, mode)


def best_depth(cv: CostVolume) -> np.ndarray:
    """Per-pixel candidate value at the best slice (ties: lowest index).

    Difference volumes take the argmin, dot volumes the argmax. This is
    a diagnostic readout of the photometrically best hypothesis, not a
    depth regressor.
    """
    if cv.mode == "difference":
        idx = np.argmin(cv.volume, axis=0)
    else:
        idx = np.argmax(cv.volume, axis=0)
    return cv.candidates.values[idx].astype(np.float32)


def loss_cv(cv_day: CostVolume, cv_syn: CostVolume):
    """Mean absolute difference between two cost volumes.

    Returns (value, grad) with grad = dL/d(cv_syn), i.e.
    sign(cv_syn - cv_day) / cells, zero at exact ties.
    """
    if cv_day.mode != cv_syn.mode:
        raise ShapeMismatchError(f"mode mismatch: {cv_day.mode} vs {cv_syn.mode}")
    if cv_day.volume.shape != cv_syn.volume.shape:
        raise ShapeMismatchError(
            f"shape mismatch: {cv_day.volume.shape} vs {cv_syn.volume.shape}")
    if not np.array_equal(cv_day.candidates.values, cv_syn.candidates.values):
        raise ShapeMismatchError("candidate depths differ")
    a = cv_day.volume.astype(np.float64)
    b = cv_syn.volume.astype(np.float64)
    cells = a.size
    value = float(np.abs(a - b).sum() / cells)
    grad = np.sign(b - a) / cells
    return value, grad
