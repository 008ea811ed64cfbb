"""Photometric/smoothness/pose losses and the stage assemblies."""

import math

import numpy as np
import pytest

from rdk.errors import KernelError, ShapeMismatchError
from rdk.losses import DEFAULT_REAL_WEIGHTS, DEFAULT_SYN_WEIGHTS, LossWeights, \
    REAL_TERMS, SYN_TERMS, assemble_real, assemble_syn, loss_photometric, \
    loss_pose, loss_smooth


def _naive_photometric(target, warped, mask, lam):
    """Scalar re-derivation: 3x3 windows clipped at borders."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    channels, height, width = target.shape
    acc, count = 0.0, 0
    for v in range(height):
        for u in range(width):
            if mask[v, u] <= 0:
                continue
            count += 1
            pixel = 0.0
            for c in range(channels):
                xs, ys = [], []
                for dv in (-1, 0, 1):
                    for du in (-1, 0, 1):
                        vv, uu = v + dv, u + du
                        if 0 <= vv < height and 0 <= uu < width:
                            xs.append(float(target[c, vv, uu]))
                            ys.append(float(warped[c, vv, uu]))
                n = len(xs)
                mx = math.fsum(xs) / n
                my = math.fsum(ys) / n
                vx = math.fsum(x * x for x in xs) / n - mx * mx
                vy = math.fsum(y * y for y in ys) / n - my * my
                vxy = math.fsum(x * y for x, y in zip(xs, ys)) / n - mx * my
                ssim = ((2 * mx * my + c1) * (2 * vxy + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
                pixel += (lam * (1 - ssim) / 2
                          + (1 - lam) * abs(float(target[c, v, u]) - float(warped[c, v, u])))
            acc += pixel / channels
    return acc / count


def test_photometric_zero_for_identical_images():
    rng = np.random.RandomState(0)
    img = rng.uniform(0, 1, (3, 10, 12))
    mask = np.ones((10, 12))
    assert loss_photometric(img, img, mask) == pytest.approx(0.0, abs=1e-15)


def test_photometric_pure_l1_constant_offset():
    img = np.random.RandomState(1).uniform(0.25, 0.5, (1, 8, 8))
    shifted = img + 0.25  # dyadic offset stays exact
    mask = np.ones((8, 8))
    value = loss_photometric(img, shifted, mask, lambda_ssim=0.0)
    assert value == pytest.approx(0.25, abs=1e-15)


def test_photometric_matches_naive_loop():
    rng = np.random.RandomState(2)
    target = rng.uniform(0, 1, (2, 7, 9))
    warped = rng.uniform(0, 1, (2, 7, 9))
    mask = (rng.uniform(0, 1, (7, 9)) > 0.3).astype(float)
    for lam in (0.0, 0.85, 1.0):
        value = loss_photometric(target, warped, mask, lambda_ssim=lam)
        oracle = _naive_photometric(target, warped, mask, lam)
        assert abs(value - oracle) < 1e-10


def test_photometric_ignores_masked_pixels():
    rng = np.random.RandomState(3)
    target = rng.uniform(0, 1, (1, 8, 8))
    warped = target.copy()
    mask = np.ones((8, 8))
    mask[:, :4] = 0.0
    warped[0, :, 0] = 5.0  # garbage confined to masked columns...
    # ...but SSIM windows reach one pixel past the mask boundary, so
    # corrupt a column two steps away from any valid pixel
    base = loss_photometric(target, target, mask)
    poked = loss_photometric(target, warped, mask)
    assert base == pytest.approx(0.0, abs=1e-15)
    assert poked == pytest.approx(0.0, abs=1e-15)


def test_photometric_bounded_on_unit_range():
    rng = np.random.RandomState(4)
    for lam in (0.0, 0.5, 1.0):
        a = rng.uniform(0, 1, (2, 8, 8))
        b = rng.uniform(0, 1, (2, 8, 8))
        value = loss_photometric(a, b, np.ones((8, 8)), lambda_ssim=lam)
        assert 0.0 <= value <= 1.0


def test_photometric_validation():
    img = np.zeros((1, 4, 4))
    with pytest.raises(KernelError):
        loss_photometric(img, img, np.zeros((4, 4)))  # empty valid region
    with pytest.raises(ShapeMismatchError):
        loss_photometric(img, np.zeros((1, 4, 5)), np.ones((4, 4)))
    with pytest.raises(KernelError):
        loss_photometric(img, img, np.ones((4, 4)), lambda_ssim=1.5)


# --- smoothness --------------------------------------------------------------


def test_smooth_zero_for_constant_depth():
    depth = np.full((6, 6), 7.0)
    image = np.random.RandomState(5).uniform(0, 1, (3, 6, 6))
    assert loss_smooth(depth, image) == pytest.approx(0.0, abs=1e-15)


def test_smooth_linear_disparity_ramp_hand_value():
    # disparity 1, 2, 3, 4 per row; mean 2.5; normalized x-steps are all
    # 0.4;  y-steps vanish; constant image leaves weights at 1
    depth = 1.0 / np.tile(np.arange(1.0, 5.0), (4, 1))
    image = np.full((1, 4, 4), 0.3)
    assert loss_smooth(depth, image) == pytest.approx(0.4, abs=1e-12)


def test_smooth_matches_naive_loop():
    rng = np.random.RandomState(6)
    depth = rng.uniform(2, 50, (5, 7))
    image = rng.uniform(0, 1, (3, 5, 7))
    value = loss_smooth(depth, image)

    disp = 1.0 / depth
    disp = disp / disp.mean()
    acc_x = []
    for v in range(5):
        for u in range(6):
            w = math.exp(-math.fsum(abs(image[c, v, u + 1] - image[c, v, u])
                                    for c in range(3)) / 3)
            acc_x.append(abs(disp[v, u + 1] - disp[v, u]) * w)
    acc_y = []
    for v in range(4):
        for u in range(7):
            w = math.exp(-math.fsum(abs(image[c, v + 1, u] - image[c, v, u])
                                    for c in range(3)) / 3)
            acc_y.append(abs(disp[v + 1, u] - disp[v, u]) * w)
    oracle = math.fsum(acc_x) / len(acc_x) + math.fsum(acc_y) / len(acc_y)
    assert abs(value - oracle) < 1e-12


def test_smooth_discounts_depth_edges_on_image_edges():
    depth = np.ones((6, 6)) * 5.0
    depth[:, 3:] = 10.0
    flat_image = np.full((1, 6, 6), 0.5)
    edge_image = flat_image.copy()
    edge_image[0, :, 3:] = 5.0  # strong image edge aligned with the depth edge
    assert loss_smooth(depth, edge_image) < loss_smooth(depth, flat_image)


def test_smooth_validation():
    with pytest.raises(KernelError):
        loss_smooth(np.ones((1, 5)), np.ones((1, 1, 5)))
    with pytest.raises(KernelError):
        loss_smooth(np.zeros((4, 4)), np.ones((1, 4, 4)))
    with pytest.raises(ShapeMismatchError):
        loss_smooth(np.ones((4, 4)), np.ones((1, 5, 4)))


# --- pose loss ---------------------------------------------------------------


def test_pose_loss_zero_for_identical():
    out = loss_pose([0.1, 0.2, 0.3], [1, 2, 3], [0.1, 0.2, 0.3], [1, 2, 3])
    assert out == {"theta": 0.0, "trans": 0.0, "total": 0.0}


def test_pose_loss_axis_aligned_offsets():
    out = loss_pose([0.4, 0.0, 0.1], [1.0, 5.0, 2.0],
                    [0.1, 0.0, 0.1], [1.0, 1.0, 2.0])
    assert out["theta"] == pytest.approx(0.3, abs=1e-15)
    assert out["trans"] == pytest.approx(4.0, abs=1e-15)
    assert out["total"] == pytest.approx(4.3, abs=1e-15)


def test_pose_loss_matches_norm_oracle():
    rng = np.random.RandomState(7)
    for _ in range(20):
        ta, tb = rng.standard_normal(3), rng.standard_normal(3)
        ra, rb = rng.standard_normal(3), rng.standard_normal(3)
        out = loss_pose(ta, ra, tb, rb)
        otheta = math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(ta, tb)))
        otrans = math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(ra, rb)))
        assert abs(out["theta"] - otheta) < 1e-14
        assert abs(out["trans"] - otrans) < 1e-14
        assert abs(out["total"] - (otheta + otrans)) < 1e-14


def test_pose_loss_squared_flag():
    out = loss_pose([0.3, 0, 0], [0, 4, 0], [0, 0, 0], [0, 0, 0], squared=True)
    assert out["theta"] == pytest.approx(0.09, abs=1e-15)
    assert out["trans"] == pytest.approx(16.0, abs=1e-15)


def test_pose_loss_triangle_inequality():
    rng = np.random.RandomState(8)
    for _ in range(20):
        a, b, c = (rng.standard_normal(3) for _ in range(3))
        z = np.zeros(3)
        ab = loss_pose(a, z, b, z)["theta"]
        ac = loss_pose(a, z, c, z)["theta"]
        cb = loss_pose(c, z, b, z)["theta"]
        assert ab <= ac + cb + 1e-12


def test_pose_loss_rejects_non_finite():
    with pytest.raises(KernelError):
        loss_pose([np.inf, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])


# --- assemblies --------------------------------------------------------------


def test_assemble_syn_unit_weights():
    report = assemble_syn({"distill": 0.2, "cost_volume": 0.1, "pose": 0.05})
    assert report.total == pytest.approx(0.35, abs=1e-15)
    assert report.stage == "syn"
    assert report.weights == DEFAULT_SYN_WEIGHTS


def test_assemble_zero_weights():
    terms = {"distill": 3.0, "cost_volume": 2.0, "pose": 1.0}
    weights = {k: 0.0 for k in SYN_TERMS}
    assert assemble_syn(terms, weights).total == 0.0


def test_assemble_real_published_default_weights():
    report = assemble_real({k: 1.0 for k in REAL_TERMS})
    assert report.weights == DEFAULT_REAL_WEIGHTS
    assert abs(report.total - 3.01) <= 1e-12 * 3.01


def test_assemble_real_distribution_weight_linearity():
    terms = {k: 1.0 for k in REAL_TERMS}
    base = assemble_real(terms).total
    terms["distribution"] = 100.0
    boosted = assemble_real(terms).total
    assert boosted - base == pytest.approx(0.99, abs=1e-12)


def test_assemble_matches_dot_product_oracle():
    rng = np.random.RandomState(9)
    for _ in range(50):
        terms = {k: rng.uniform(0, 5) for k in REAL_TERMS}
        weights = {k: rng.uniform(0, 2) for k in REAL_TERMS}
        total = assemble_real(terms, weights).total
        oracle = math.fsum(weights[k] * terms[k] for k in REAL_TERMS)
        assert abs(total - oracle) <= 1e-15 * max(1.0, abs(oracle))


def test_report_total_is_weighted_sum_of_terms():
    rng = np.random.RandomState(10)
    terms = {k: rng.uniform(0, 5) for k in SYN_TERMS}
    weights = {k: rng.uniform(0, 2) for k in SYN_TERMS}
    report = assemble_syn(terms, weights)
    recomputed = sum(report.weights[k] * report.terms[k] for k in SYN_TERMS)
    assert abs(report.total - recomputed) <= 1e-12 * max(1.0, abs(recomputed))


def test_assemble_validation():
    with pytest.raises(KernelError):
        assemble_syn({"distill": 1.0})  # missing keys
    with pytest.raises(KernelError):
        assemble_syn({"distill": 1.0, "cost_volume": 1.0, "pose": np.nan})
    with pytest.raises(KernelError):
        assemble_syn({"distill": 1.0, "cost_volume": 1.0, "pose": 1.0},
                     {"distill": -1.0, "cost_volume": 1.0, "pose": 1.0})
    with pytest.raises(KernelError):
        assemble_real({"distill": 1.0, "cost_volume": 1.0, "pose": 1.0})


def test_loss_weights_validation():
    weights = LossWeights()
    assert weights.syn == DEFAULT_SYN_WEIGHTS
    assert weights.real == DEFAULT_REAL_WEIGHTS
    assert weights.lambda_ssim == 0.85
    with pytest.raises(KernelError):
        LossWeights(syn={"distill": 1.0})
    with pytest.raises(KernelError):
        LossWeights(lambda_ssim=2.0)
