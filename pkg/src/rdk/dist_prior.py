"""Differentiable depth histograms and the KL structure-prior loss.

The histogram is a kernel density estimate whose kernel is the
sigmoid derivative, so each bin probability is a difference of two
sigmoids and every bin is differentiable in every depth pixel:

    P(n) = 1/(HW) * sum_x [ sigmoid((D(x) - b_n + L/2) / a)
                          - sigmoid((D(x) - b_n - L/2) / a) ]

with bin width L = (d_max - d_min) / bins, centers
b_n = d_min + L (n + 1/2), and bandwidth a (default L/20). Bin sums
telescope: sum_n P(n) = mean_x [sigmoid((D-d_min)/a) - sigmoid((D-d_max)/a)],
always in (0, 1); mass only leaks near the range boundaries.

The KL loss compares a per-map histogram against a reference
distribution. Raw bin masses need not sum to one and far bins can be
empty, so both operands get a 1e-8 floor and are renormalized before
KL; the depth gradient chains through that renormalization, which is
what makes it vanish identically when the two distributions agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import KernelError, ShapeMismatchError

SMOOTHING_FLOOR = 1e-8
_PIXEL_CHUNK = 1 << 14  # fixed, so reductions are run-to-run identical


@dataclass(frozen=True)
class HistogramSpec:
    """Bin layout of the depth range [d_min, d_max]."""

    d_min: float = 3.5
    d_max: float = 80.0
    bins: int = 100
    bandwidth: float | None = None  # None -> bin_width / 20

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise KernelError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")
        if self.bins < 2:
            raise KernelError(f"need at least 2 bins, got {self.bins}")
        if self.bandwidth is None:
            object.__setattr__(self, "bandwidth", self.bin_width / 20.0)
        if not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise KernelError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def bin_width(self) -> float:
        return (self.d_max - self.d_min) / self.bins

    @property
    def bin_centers(self) -> np.ndarray:
        return self.d_min + self.bin_width * (np.arange(self.bins) + 0.5)


@dataclass(eq=False)
class Histogram:
    spec: HistogramSpec
    probs: np.ndarray  # (bins,) float64, raw bin masses, >= 0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (self.spec.bins,):
            raise ShapeMismatchError(
                f"{probs.shape[0] if probs.ndim == 1 else probs.shape} probabilities "
                f"for {self.spec.bins} bins")
        if (probs < 0).any() or not np.isfinite(probs).all():
            raise KernelError("bin probabilities must be finite and non-negative")
        self.probs = probs


def _flat_depth(depth):
    d = np.asarray(depth, dtype=np.float64)
    if d.size == 0:
        raise KernelError("empty depth map")
    if not np.isfinite(d).all():
        raise KernelError("depth map contains NaN or Inf")
    return d.reshape(-1)


def soft_histogram(depth, spec: HistogramSpec = HistogramSpec()) -> Histogram:
    """Soft-binned depth distribution (see module docstring)."""
    d = _flat_depth(depth)
    centers = spec.bin_centers
    half = spec.bin_width / 2.0
    a = spec.bandwidth
    total = np.zeros(spec.bins)
    for start in range(0, d.size, _PIXEL_CHUNK):
        chunk = d[start:start + _PIXEL_CHUNK]
        z_hi = (chunk[None, :] - centers[:, None] + half) / a
        z_lo = (chunk[None, :] - centers[:, None] - half) / a
        total += (expit(z_hi) - expit(z_lo)).sum(axis=1)
    return Histogram(spec, total / d.size)


def soft_histogram_grad(depth, spec: HistogramSpec = HistogramSpec()) -> np.ndarray:
    """d P(n) / d D(x) for every bin and pixel.

    Returns (bins, H, W) (or (bins, len) for flat input):
        1/(HW * a) * [ k((D-b_n+L/2)/a) - k((D-b_n-L/2)/a) ]
    with k(z) = sigmoid(z) * sigmoid(-z), the kernel itself.
    """
    d = np.asarray(depth, dtype=np.float64)
    flat = _flat_depth(depth)
    centers = spec.bin_centers
    half = spec.bin_width / 2.0
    a = spec.bandwidth
    z_hi = (flat[None, :] - centers[:, None] + half) / a
    z_lo = (flat[None, :] - centers[:, None] - half) / a
    grad = (expit(z_hi) * expit(-z_hi) - expit(z_lo) * expit(-z_lo)) / (flat.size * a)
    return grad.reshape((spec.bins,) + d.shape)


def telescoped_mass(depth, spec: HistogramSpec = HistogramSpec()) -> float:
    """Boundary-sigmoid expression that sum_n P(n) telescopes to."""
    d = _flat_depth(depth)
    upper = expit((d - spec.d_min) / spec.bandwidth)
    lower = expit((d - spec.d_max) / spec.bandwidth)
    return float((upper - lower).sum() / d.size)


def _smoothed(probs):
    u = probs + SMOOTHING_FLOOR
    total = u.sum()
    return u / total, total


def kl_loss(adv: Histogram, day: Histogram):
    """KL divergence of the adverse histogram from the reference.

    Both histograms are floored and renormalized first (empty far bins
    would otherwise make the ratio undefined). Returns (value, grad)
    where grad[i] = log(p_adv(i)/p_day(i)) + 1, the partial derivative
    with respect to the normalized adverse probabilities.
    """
    if adv.spec != day.spec:
        raise ShapeMismatchError(f"histogram specs differ: {adv.spec} vs {day.spec}")
    p, _ = _smoothed(adv.probs)
    q, _ = _smoothed(day.probs)
    log_ratio = np.log(p / q)
    value = float(np.sum(p * log_ratio))
    return value, log_ratio + 1.0


def kl_loss_depth_grad(depth, spec: HistogramSpec, day: Histogram) -> np.ndarray:
    """Gradient of kl_loss(soft_histogram(depth), day) in every pixel.

    Chains through the smoothing floor and renormalization: with raw
    masses u and total U, d KL / d u_j = (log(p_j/q_j) - KL) / U, which
    is then contracted with soft_histogram_grad. Verified against
    central finite differences.
    """
    if spec != day.spec:
        raise ShapeMismatchError(f"histogram specs differ: {spec} vs {day.spec}")
    d = np.asarray(depth, dtype=np.float64)
    hist = soft_histogram(depth, spec)
    p, total = _smoothed(hist.probs)
    q, _ = _smoothed(day.probs)
    log_ratio = np.log(p / q)
    value = np.sum(p * log_ratio)
    per_bin = (log_ratio - value) / total
    per_pixel = soft_histogram_grad(depth, spec).reshape(spec.bins, -1)
    return (per_bin @ per_pixel).reshape(d.shape)


def aggregate_reference(depth_maps, spec: HistogramSpec = HistogramSpec()) -> Histogram:
    """Equal-weight mean of per-map soft histograms.

    Each map contributes one histogram regardless of its resolution.
    Bins are accumulated with exact summation, so the result does not
    depend on the order of the stream.
    """
    rows = [soft_histogram(m, spec).probs for m in depth_maps]
    if not rows:
        raise KernelError("aggregate_reference needs at least one depth map")
    stacked = np.stack(rows, axis=0)
    mean = np.array([math.fsum(stacked[:, n]) for n in range(spec.bins)])
    return Histogram(spec, mean / len(rows))
