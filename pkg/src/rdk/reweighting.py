"""Consistency confidence maps and reweighted pseudo-label losses.

Two teachers that agree at a pixel are probably both right there; the
confidence map turns their relative disagreement into a weight:

    confidence = exp(-beta * |d_syn - d_day| / d_syn)      in (0, 1]
    weights    = confidence + eps                          in (eps, 1+eps]

(beta = eps = 1 by default). The eps floor keeps a weak supervision
signal alive even where the teachers disagree completely.

Relative-error losses divide by predicted depth, so every denominator
is clamped below at DEPTH_CLAMP (0.1 m, the evaluation floor). The
absolute value has no derivative at exact ties; these functions take
subgradient 0 there, and gradient checks must skip a small band
around ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KernelError, ShapeMismatchError

DEPTH_CLAMP = 0.1
DEFAULT_BETA = 1.0
DEFAULT_EPS = 1.0


@dataclass(eq=False)
class ConsistencyMap:
    confidence: np.ndarray  # (H, W) float64 in (0, 1]
    weights: np.ndarray     # confidence + eps


def _pair(a, b, names):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{names[0]} {a.shape} vs {names[1]} {b.shape}")
    if a.size == 0:
        raise KernelError("empty depth maps")
    return a, b


def consistency_map(d_syn, d_day, beta=DEFAULT_BETA, eps=DEFAULT_EPS) -> ConsistencyMap:
    """Exponential agreement map between two teacher depth maps."""
    d_syn, d_day = _pair(d_syn, d_day, ("d_syn", "d_day"))
    s = np.maximum(d_syn, DEPTH_CLAMP)
    rel = np.abs(s - d_day) / s
    confidence = np.exp(-beta * rel)
    return ConsistencyMap(confidence, confidence + eps)


def loss_distill(d_day, d_syn):
    """Absolute relative depth distillation loss.

    mean |(d_day - d_syn) / d_syn| with the denominator clamped.
    Returns (value, grad) with grad = dL/d(d_syn); where the clamp is
    inactive that is -sign(d_day - d_syn) * d_day / (HW * d_syn^2).
    """
    d_day, d_syn = _pair(d_day, d_syn, ("d_day", "d_syn"))
    n = d_syn.size
    s = np.maximum(d_syn, DEPTH_CLAMP)
    diff = d_day - s
    value = float((np.abs(diff) / s).sum() / n)
    sign = np.sign(diff)
    grad = np.where(d_syn > DEPTH_CLAMP, -sign * d_day / (n * s * s), 0.0)
    return value, grad


def loss_consistent_depth(d_real, d_syn, weights):
    """Reweighted pseudo-label loss for the real adaptation stage.

    mean W * |(d_real - d_syn) / d_real| with the denominator clamped.
    Returns (value, grad) with grad = dL/d(d_real); where the clamp is
    inactive that is W * sign(d_real - d_syn) * d_syn / (HW * d_real^2)
    by the quotient rule.
    """
    d_real, d_syn = _pair(d_real, d_syn, ("d_real", "d_syn"))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != d_real.shape:
        raise ShapeMismatchError(f"weights {w.shape} vs depth {d_real.shape}")
    n = d_real.size
    denom = np.maximum(d_real, DEPTH_CLAMP)
    diff = denom - d_syn
    value = float((w * np.abs(diff) / denom).sum() / n)
    sign = np.sign(diff)
    grad = np.where(d_real > DEPTH_CLAMP,
                    w * sign * d_syn / (n * denom * denom), 0.0)
    return value, grad
