"""Depth evaluation protocol: AbsRel, SqRel, RMSE and threshold accuracy.

Pixels whose ground truth lies outside [lo, hi] are excluded entirely;
predictions at the surviving pixels are clamped into [lo, hi] before
any metric. delta1 counts max(pred/gt, gt/pred) < 1.25 (strict) and is
reported in percent. No scale alignment is applied unless asked for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KernelError, ShapeMismatchError

DELTA1_THRESHOLD = 1.25


@dataclass(frozen=True)
class EvalRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 < self.lo < self.hi):
            raise KernelError(f"need 0 < lo < hi, got [{self.lo}, {self.hi}]")


@dataclass
class MetricRow:
    abs_rel: float
    sq_rel: float
    rmse: float
    delta1: float   # percent
    n_valid: int

    def as_dict(self) -> dict:
        return {"abs_rel": self.abs_rel, "sq_rel": self.sq_rel,
                "rmse": self.rmse, "delta1": self.delta1, "n_valid": self.n_valid}


def evaluate(pred, gt, rng: EvalRange, median_scale=False) -> MetricRow:
    """Metrics over pixels with in-range ground truth."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"pred {p.shape} vs gt {g.shape}")
    valid = (g >= rng.lo) & (g <= rng.hi)
    n = int(valid.sum())
    if n == 0:
        raise KernelError(f"no ground truth inside [{rng.lo}, {rng.hi}]")
    p = p[valid]
    g = g[valid]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, rng.lo, rng.hi)

    diff = p - g
    abs_rel = float((np.abs(diff) / g).mean())
    sq_rel = float((diff * diff / g).mean())
    rmse = float(np.sqrt((diff * diff).mean()))
    ratio = np.maximum(p / g, g / p)
    delta1 = float(100.0 * (ratio < DELTA1_THRESHOLD).mean())
    return MetricRow(abs_rel, sq_rel, rmse, delta1, n)


def evaluate_batch(pairs, rng: EvalRange, median_scale=False, pooled=False) -> MetricRow:
    """Aggregate metrics over (pred, gt) pairs.

    Default: unweighted mean of per-image rows (every image counts
    equally); `pooled` concatenates the valid pixels of all images and
    evaluates them as one population instead. n_valid is the total
    either way.
    """
    if pooled:
        preds, gts = [], []
        for pred, gt in pairs:
            p = np.asarray(pred, dtype=np.float64).reshape(-1)
            g = np.asarray(gt, dtype=np.float64).reshape(-1)
            if p.shape != g.shape:
                raise ShapeMismatchError(f"pred {p.shape} vs gt {g.shape}")
            preds.append(p)
            gts.append(g)
        if not preds:
            raise KernelError("evaluate_batch needs at least one pair")
        return evaluate(np.concatenate(preds), np.concatenate(gts), rng,
                        median_scale=median_scale)

    rows = [evaluate(pred, gt, rng, median_scale=median_scale) for pred, gt in pairs]
    if not rows:
        raise KernelError("evaluate_batch needs at least one pair")
    k = len(rows)
    return MetricRow(
        abs_rel=sum(r.abs_rel for r in rows) / k,
        sq_rel=sum(r.sq_rel for r in rows) / k,
        rmse=sum(r.rmse for r in rows) / k,
        delta1=sum(r.delta1 for r in rows) / k,
        n_valid=sum(r.n_valid for r in rows),
    )
