"""Analytically solvable scenes and the end-to-end selfcheck suite.

A scene is a textured 3-D plane seen from two camera positions with a
known relative pose. Because the geometry is a single plane, the
target-to-source pixel correspondence is available in closed form, so
`render` can synthesize the second view by evaluating the texture at
exact correspondence locations: the pair (feat_t, feat_prev) has no
resampling error at all, and the per-pixel depth is the ray-plane
intersection. That makes the pair a ground-truth oracle for the warp
operator and for plane-sweep argmin accuracy.

Textures are sums of low-frequency sinusoids, not noise: bilinear
interpolation of a sinusoid with per-axis frequency f carries error
at most (2 pi f)^2 / 8 of its amplitude, so sweep tests have an
analytic error budget instead of a flake rate.

`selfcheck` runs every property this library promises (histogram
constants, gradient fidelity against central differences, telescoped
normalization, KL properties, sweep argmin accuracy, warp round-trip,
consistency-map and assembly exactness, the metrics protocol) and
reports one measured-vs-tolerance line per check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dist_prior, losses, metrics, reweighting
from .cost_volume import DepthCandidates, build_cost_volume, best_depth, loss_cv
from .dist_prior import Histogram, HistogramSpec, kl_loss, kl_loss_depth_grad, \
    soft_histogram, soft_histogram_grad, telescoped_mass
from .errors import KernelError
from .geometry import Intrinsics, Pose, invert_pose, pose_to_matrix, warp
from .losses import assemble_real, assemble_syn
from .metrics import EvalRange, evaluate
from .reweighting import consistency_map, loss_consistent_depth, loss_distill


@dataclass(frozen=True)
class SceneSpec:
    """A textured plane plus a camera pair.

    The plane is z = z0 + slope_x * X + slope_y * Y in the target
    camera frame (slopes in meters of depth per lateral meter;
    fronto_parallel forces both to zero). Texture randomness is fully
    determined by `texture_seed`, so renders are reproducible.
    """

    kind: str = "fronto_parallel"       # or "sloped_plane"
    z0: float = 41.75
    slope_x: float = 0.0
    slope_y: float = 0.0
    height: int = 64
    width: int = 128
    channels: int = 4
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(160.0, 160.0, 63.5, 31.5))
    pose: Pose = field(default_factory=lambda: Pose(np.zeros(3), np.array([5.0, 0.0, 0.0])))
    num_waves: int = 3
    max_frequency: float = 0.012        # cycles/pixel per axis, keep << 0.25
    amplitude: float = 1.0
    texture_seed: int = 7

    def __post_init__(self):
        if self.kind not in ("fronto_parallel", "sloped_plane"):
            raise KernelError(f"unknown scene kind {self.kind!r}")
        if self.kind == "fronto_parallel" and (self.slope_x or self.slope_y):
            raise KernelError("fronto_parallel scenes cannot slope")
        if self.z0 <= 0:
            raise KernelError(f"plane depth must be positive, got {self.z0}")
        if not (0 < self.max_frequency < 0.25):
            raise KernelError("texture must stay band-limited (frequency < 0.25 cy/px)")
        if min(self.height, self.width, self.channels, self.num_waves) < 1:
            raise KernelError("degenerate scene dimensions")


@dataclass(eq=False)
class RenderResult:
    feat_t: np.ndarray      # (C, H, W) float32, current frame
    feat_prev: np.ndarray   # (C, H, W) float32, previous frame
    depth_gt: np.ndarray    # (H, W) float32, target-frame plane depth
    depth_prev: np.ndarray  # (H, W) float32, source-frame plane depth
    pose: Pose              # target -> source


def _texture_params(spec: SceneSpec):
    """Per-channel wave table (fu, fv, phase, amp), derived from the seed."""
    rng = np.random.RandomState(spec.texture_seed)
    waves = np.empty((spec.channels, spec.num_waves, 4))
    for c in range(spec.channels):
        direction = rng.uniform(0.0, 2.0 * np.pi, spec.num_waves)
        freq = rng.uniform(0.3, 1.0, spec.num_waves) * spec.max_frequency
        waves[c, :, 0] = freq * np.cos(direction)
        waves[c, :, 1] = freq * np.sin(direction)
        waves[c, :, 2] = rng.uniform(0.0, 2.0 * np.pi, spec.num_waves)
        waves[c, :, 3] = spec.amplitude / spec.num_waves
    return waves


def _texture(waves, us, vs):
    """Evaluate the wave table at (possibly fractional) pixel coords."""
    out = np.zeros((waves.shape[0],) + np.shape(us))
    for c in range(waves.shape[0]):
        for fu, fv, phase, amp in waves[c]:
            out[c] += amp * np.sin(2.0 * np.pi * (fu * us + fv * vs) + phase)
    return out


def _plane(spec: SceneSpec):
    """(normal, offset) of the plane in the target frame: n . X = c."""
    return np.array([-spec.slope_x, -spec.slope_y, 1.0]), spec.z0


def _rays(intrinsics: Intrinsics, height, width):
    us, vs = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    return np.stack([(us - intrinsics.cx) / intrinsics.fx,
                     (vs - intrinsics.cy) / intrinsics.fy,
                     np.ones_like(us)])


def plane_depth(spec: SceneSpec, frame="target") -> np.ndarray:
    """Per-pixel ray-plane intersection depth in the requested frame."""
    normal, offset = _plane(spec)
    if frame == "source":
        rot, trans = pose_to_matrix(spec.pose)
        normal, offset = rot @ normal, offset + (rot @ normal) @ trans
    elif frame != "target":
        raise KernelError(f"unknown frame {frame!r}")
    rays = _rays(spec.intrinsics, spec.height, spec.width)
    denom = np.einsum("i,ihw->hw", normal, rays)
    with np.errstate(divide="ignore"):
        depth = offset / denom
    if (denom <= 0).any() or (depth <= 0).any():
        raise KernelError("plane is not fully in front of the camera")
    return depth


def analytic_correspondence(spec: SceneSpec):
    """Exact source-pixel location each target pixel sees on the plane.

    Returns (us, vs) float64 maps: target pixel (u, v) corresponds to
    source image location (us[v,u], vs[v,u]). This is what `warp`
    approximates by bilinear sampling.
    """
    k = spec.intrinsics
    depth = plane_depth(spec, "target")
    rays = _rays(k, spec.height, spec.width)
    pts = depth[None] * rays
    rot, trans = pose_to_matrix(spec.pose)
    moved = np.einsum("ij,jhw->ihw", rot, pts) + trans[:, None, None]
    return (k.fx * moved[0] / moved[2] + k.cx,
            k.fy * moved[1] / moved[2] + k.cy)


def render(spec: SceneSpec) -> RenderResult:
    """Synthesize the frame pair, per-pixel depths, and the pose.

    feat_prev is produced by evaluating the texture at the exact
    correspondence of each source pixel (back-project onto the plane,
    move into the target frame, project), so the pair is free of
    interpolation error. An identity pose short-circuits to exact
    copies so zero-motion fixtures are bit-identical.
    """
    k = spec.intrinsics
    waves = _texture_params(spec)
    us, vs = np.meshgrid(np.arange(spec.width, dtype=np.float64),
                         np.arange(spec.height, dtype=np.float64))
    feat_t = _texture(waves, us, vs).astype(np.float32)
    depth_t = plane_depth(spec, "target")

    if spec.pose.is_identity():
        return RenderResult(feat_t, feat_t.copy(),
                            depth_t.astype(np.float32),
                            depth_t.astype(np.float32), spec.pose)

    depth_s = plane_depth(spec, "source")
    rays = _rays(k, spec.height, spec.width)
    pts_src = depth_s[None] * rays
    rot, trans = pose_to_matrix(spec.pose)
    back = np.einsum("ji,jhw->ihw", rot, pts_src - trans[:, None, None])  # R^T (X - t)
    if (back[2] <= 0).any():
        raise KernelError("plane is not fully in front of the camera")
    pu = k.fx * back[0] / back[2] + k.cx
    pv = k.fy * back[1] / back[2] + k.cy
    feat_prev = _texture(waves, pu, pv).astype(np.float32)
    return RenderResult(feat_t, feat_prev, depth_t.astype(np.float32),
                        depth_s.astype(np.float32), spec.pose)


# ---------------------------------------------------------------------------
# finite-difference machinery shared by tests and selfcheck


def finite_difference_grad(f, x, step_scale=1e-3):
    """Central differences of a scalar function, h = step * max(1, |x_i|)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        h = step_scale * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def finite_difference_jacobian(f, x, step_scale=1e-3):
    """Central differences of a vector function; rows index outputs."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    cols = []
    for i in range(flat.size):
        h = step_scale * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + h
        f_plus = np.asarray(f(x), dtype=np.float64)
        flat[i] = orig - h
        f_minus = np.asarray(f(x), dtype=np.float64)
        flat[i] = orig
        cols.append((f_plus - f_minus) / (2.0 * h))
    return np.stack(cols, axis=-1)


def max_relative_error(analytic, numeric):
    """Worst deviation relative to max(|a_i|, |n_i|, overall magnitude).

    Entries far below the gradient's largest magnitude carry only
    finite-difference truncation noise, so they are judged against the
    overall magnitude (the usual atol-plus-rtol convention) instead of
    their own vanishing size.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
    return float((np.abs(a - n) / denom).max())


# ---------------------------------------------------------------------------
# selfcheck


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""


@dataclass
class SelfCheckReport:
    results: list

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def format(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            line = f"{status}  {r.name:<34} measured={r.measured:.6e}  tol={r.tolerance:.6e}"
            if r.detail:
                line += f"  ({r.detail})"
            lines.append(line)
        verdict = "all checks passed" if self.ok else "FAILURES PRESENT"
        lines.append(f"{len(self.results)} checks: {verdict}")
        return "\n".join(lines)


def _tie_free_pair(rng, shape, gap=0.5):
    """Two random maps in [4, 79] whose pointwise difference avoids the
    absolute-value kink by at least `gap` (central differences with
    h <= 0.079 must never straddle it)."""
    a = rng.uniform(4.0, 79.0, shape)
    b = rng.uniform(4.0, 79.0, shape)
    bad = np.abs(a - b) < gap
    while bad.any():
        b[bad] = rng.uniform(4.0, 79.0, int(bad.sum()))
        bad = np.abs(a - b) < gap
    return a, b


def _interior_mask(spec: SceneSpec, margin=1.0):
    us, vs = analytic_correspondence(spec)
    return ((us >= margin) & (us <= spec.width - 1 - margin)
            & (vs >= margin) & (vs <= spec.height - 1 - margin))


def _check_histogram_constants(out):
    spec = HistogramSpec()
    err = max(abs(spec.bin_width - 0.765),
              abs(spec.bin_centers[0] - 3.8825),
              abs(spec.bandwidth - 0.03825))
    out.append(CheckResult("histogram-constants", err == 0.0, err, 0.0,
                           "bin width / first center / bandwidth at published defaults"))


def _check_gradients(out, maps=20, side=16, tol=1e-4):
    # The histogram kernel must be wide relative to the prescribed
    # step (h up to 0.079 m) for central differences to be trustworthy;
    # the analytic formulas themselves do not depend on the bandwidth.
    spec = HistogramSpec(bandwidth=8.0)
    day = soft_histogram(np.random.RandomState(991).uniform(4.0, 79.0, (32, 32)), spec)

    worst = {"soft-histogram": 0.0, "kl-depth": 0.0, "distill": 0.0, "consistent": 0.0}
    for seed in range(maps):
        rng = np.random.RandomState(seed)
        depth = rng.uniform(4.0, 79.0, (side, side))

        ana = soft_histogram_grad(depth, spec).reshape(spec.bins, -1)
        num = finite_difference_jacobian(
            lambda d: soft_histogram(d, spec).probs, depth).reshape(spec.bins, -1)
        worst["soft-histogram"] = max(worst["soft-histogram"],
                                      max_relative_error(ana, num))

        ana = kl_loss_depth_grad(depth, spec, day)
        num = finite_difference_grad(
            lambda d: kl_loss(soft_histogram(d, spec), day)[0], depth)
        worst["kl-depth"] = max(worst["kl-depth"], max_relative_error(ana, num))

        d_day, d_syn = _tie_free_pair(rng, (side, side))
        ana = loss_distill(d_day, d_syn)[1]
        num = finite_difference_grad(lambda d: loss_distill(d_day, d)[0], d_syn)
        worst["distill"] = max(worst["distill"], max_relative_error(ana, num))

        d_real, d_syn2 = _tie_free_pair(rng, (side, side))
        weights = consistency_map(d_syn2, d_real).weights
        ana = loss_consistent_depth(d_real, d_syn2, weights)[1]
        num = finite_difference_grad(
            lambda d: loss_consistent_depth(d, d_syn2, weights)[0], d_real)
        worst["consistent"] = max(worst["consistent"], max_relative_error(ana, num))

    for key, value in worst.items():
        out.append(CheckResult(f"gradient-{key}", value < tol, value, tol,
                               f"{maps} random {side}x{side} maps, central differences"))


def _check_telescoping(out):
    spec = HistogramSpec()
    rng = np.random.RandomState(5)
    worst = 0.0
    for _ in range(5):
        depth = rng.uniform(4.0, 79.0, (32, 32))
        total = soft_histogram(depth, spec).probs.sum()
        worst = max(worst, abs(total - telescoped_mass(depth, spec)))
    out.append(CheckResult("telescoping-identity", worst < 1e-9, worst, 1e-9,
                           "bin sum equals the boundary-sigmoid expression"))

    lo = spec.d_min + 5 * spec.bin_width
    hi = spec.d_max - 5 * spec.bin_width
    interior = rng.uniform(lo, hi, (32, 32))
    mass = soft_histogram(interior, spec).probs.sum()
    deficit = 1.0 - mass
    out.append(CheckResult("telescoping-interior-mass", deficit < 1e-3, deficit, 1e-3,
                           "mass deficit for depths 5 bins inside the range"))


def _check_kl(out):
    spec = HistogramSpec()
    rng = np.random.RandomState(17)
    worst_self = 0.0
    most_negative = 0.0
    for _ in range(100):
        p = Histogram(spec, rng.dirichlet(np.ones(spec.bins)))
        q = Histogram(spec, rng.dirichlet(np.ones(spec.bins)))
        worst_self = max(worst_self, abs(kl_loss(p, p)[0]))
        most_negative = min(most_negative, kl_loss(p, q)[0])
    out.append(CheckResult("kl-identity", worst_self <= 1e-10, worst_self, 1e-10,
                           "kl(p, p) over 100 random histograms"))
    out.append(CheckResult("kl-nonnegative", most_negative >= -1e-12,
                           most_negative, -1e-12, "Gibbs bound after smoothing"))

    point = np.zeros(spec.bins)
    point[0] = 1.0
    uniform = np.full(spec.bins, 1.0 / spec.bins)
    value = kl_loss(Histogram(spec, point), Histogram(spec, uniform))[0]
    err = abs(value - math.log(spec.bins)) / math.log(spec.bins)
    out.append(CheckResult("kl-pointmass-vs-uniform", err < 0.02, err, 0.02,
                           f"measured {value:.6f} vs log({spec.bins})"))


def _check_plane_sweep(out, spec: SceneSpec, candidates: DepthCandidates):
    scene = render(spec)
    interior = _interior_mask(spec)
    target = int(np.argmin(np.abs(candidates.values - spec.z0)))
    for mode in ("difference", "dot"):
        cv = build_cost_volume(scene.feat_t, scene.feat_prev, scene.pose,
                               candidates, spec.intrinsics, mode=mode)
        idx = np.argmin(cv.volume, axis=0) if mode == "difference" \
            else np.argmax(cv.volume, axis=0)
        hit = float((idx[interior] == target).mean())
        out.append(CheckResult(f"planesweep-argmin-{mode}", hit >= 0.99, hit, 0.99,
                               f"fraction hitting candidate {target} "
                               f"({candidates.values[target]:.2f} m)"))


def _check_warp_roundtrip(out, spec: SceneSpec):
    identity = Pose(np.zeros(3), np.zeros(3))
    scene = render(SceneSpec(kind=spec.kind, z0=spec.z0,
                             height=spec.height, width=spec.width,
                             channels=spec.channels, intrinsics=spec.intrinsics,
                             pose=identity, num_waves=spec.num_waves,
                             max_frequency=spec.max_frequency,
                             amplitude=spec.amplitude,
                             texture_seed=spec.texture_seed))
    warped, mask = warp(scene.feat_prev, identity, scene.depth_gt, spec.intrinsics)
    exact = (warped.tobytes() == scene.feat_prev.tobytes()) and bool((mask == 1).all())
    out.append(CheckResult("warp-identity-bitexact", exact,
                           0.0 if exact else 1.0, 0.0, "identity pose copies the input"))

    pose = Pose(np.array([0.02, -0.015, 0.01]), np.array([0.6, 0.25, -0.35]))
    moving = SceneSpec(kind="fronto_parallel", z0=20.0, height=spec.height,
                       width=spec.width, channels=spec.channels,
                       intrinsics=spec.intrinsics, pose=pose,
                       num_waves=spec.num_waves, max_frequency=spec.max_frequency,
                       amplitude=spec.amplitude, texture_seed=spec.texture_seed)
    scene = render(moving)
    forward, mask_fwd = warp(scene.feat_prev, pose, scene.depth_gt, spec.intrinsics)
    back, mask_back = warp(forward, invert_pose(pose), scene.depth_prev, spec.intrinsics)
    carried, _ = warp(mask_fwd, invert_pose(pose), scene.depth_prev, spec.intrinsics)
    both = (mask_back > 0) & (carried >= 0.999)
    err = float(np.abs(back.astype(np.float64) - scene.feat_prev.astype(np.float64))
                [:, both].mean()) / moving.amplitude
    out.append(CheckResult("warp-roundtrip", err < 1e-2, err, 1e-2,
                           "mean abs error over the doubly-valid region / amplitude"))


def _check_consistency(out):
    base = np.full((8, 8), 4.0)
    cm = consistency_map(base, base)
    err = max(float(np.abs(cm.confidence - 1.0).max()),
              float(np.abs(cm.weights - 2.0).max()))
    shifted = base * (1.0 + math.log(2.0))
    cm2 = consistency_map(base, shifted)
    err = max(err, float(np.abs(cm2.confidence - 0.5).max()))
    out.append(CheckResult("consistency-exactness", err < 1e-12, err, 1e-12,
                           "identical maps -> 1 and 2; ln-2 relative error -> 0.5"))


def _check_assembly(out):
    report = assemble_real({"consistent_depth": 1.0, "distribution": 1.0,
                            "cost_volume": 1.0, "pose": 1.0})
    err = abs(report.total - 3.01) / 3.01
    out.append(CheckResult("assembly-exactness", err < 1e-12, err, 1e-12,
                           "unit terms at published real-stage weights -> 3.01"))

    rng = np.random.RandomState(3)
    worst = 0.0
    for _ in range(20):
        terms = {k: rng.uniform(0.0, 2.0) for k in losses.REAL_TERMS}
        weights = {k: rng.uniform(0.0, 2.0) for k in losses.REAL_TERMS}
        scale = rng.uniform(0.5, 2.0)
        total = assemble_real(terms, weights).total
        scaled = assemble_real({k: scale * v for k, v in terms.items()}, weights).total
        expected = scale * total
        if expected != 0:
            worst = max(worst, abs(scaled - expected) / abs(expected))
        oracle = sum(weights[k] * terms[k] for k in losses.REAL_TERMS)
        if oracle != 0:
            worst = max(worst, abs(total - oracle) / abs(oracle))
    out.append(CheckResult("assembly-linearity", worst < 1e-14, worst, 1e-14,
                           "superposition and dot-product oracle"))


def _check_metrics(out):
    rng_eval = EvalRange(0.1, 80.0)
    gt = np.array([[4.0, 8.0], [16.0, 4.5]])
    row = evaluate(gt, gt, rng_eval)
    err = max(abs(row.abs_rel), abs(row.sq_rel), abs(row.rmse), abs(row.delta1 - 100.0))
    row_12 = evaluate(1.2 * gt, gt, rng_eval)
    err = max(err, abs(row_12.abs_rel - 0.2), abs(row_12.delta1 - 100.0))
    row_125 = evaluate(1.25 * gt, gt, rng_eval)
    err = max(err, abs(row_125.delta1 - 0.0))
    out.append(CheckResult("metrics-protocol", err < 1e-12, err, 1e-12,
                           "identity, 1.2x and strict 1.25x ratio cases"))

    rng = np.random.RandomState(11)
    pred = rng.uniform(0.5, 90.0, (8, 8))
    gt = rng.uniform(0.05, 95.0, (8, 8))
    row = evaluate(pred, gt, rng_eval)
    naive = _naive_metrics(pred, gt, rng_eval)
    err = max(abs(row.abs_rel - naive["abs_rel"]), abs(row.sq_rel - naive["sq_rel"]),
              abs(row.rmse - naive["rmse"]), abs(row.delta1 - naive["delta1"]))
    out.append(CheckResult("metrics-vs-naive-oracle", err < 1e-12, err, 1e-12,
                           "range-masked random fixture vs a scalar loop"))


def _naive_metrics(pred, gt, rng_eval):
    abs_rel = sq_rel = sq = good = n = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if not (rng_eval.lo <= g <= rng_eval.hi):
            continue
        p = min(max(p, rng_eval.lo), rng_eval.hi)
        n += 1
        abs_rel += abs(p - g) / g
        sq_rel += (p - g) ** 2 / g
        sq += (p - g) ** 2
        good += 1 if max(p / g, g / p) < 1.25 else 0
    return {"abs_rel": abs_rel / n, "sq_rel": sq_rel / n,
            "rmse": math.sqrt(sq / n), "delta1": 100.0 * good / n}


def selfcheck(spec: SceneSpec | None = None,
              candidates: DepthCandidates | None = None) -> SelfCheckReport:
    """Run the full property suite; failures become report entries."""
    if spec is None:
        spec = SceneSpec()
    if candidates is None:
        candidates = DepthCandidates.inverse_depth(num=32)
    results = []
    _check_histogram_constants(results)
    _check_gradients(results)
    _check_telescoping(results)
    _check_kl(results)
    _check_plane_sweep(results, spec, candidates)
    _check_warp_roundtrip(results, spec)
    _check_consistency(results)
    _check_assembly(results)
    _check_metrics(results)
    return SelfCheckReport(results)
