"""Pinhole camera model, rigid transforms, and inverse warping.

Conventions, fixed once here so golden tests are reproducible:

* pixel centers sit at integer coordinates; pixel (u, v) back-projects
  along ((u - cx)/fx, (v - cy)/fy, 1);
* a pose maps target-frame points to source-frame points
  (X_src = R X_tgt + t), so `warp` pulls the source image into the
  target grid;
* rotations are axis-angle vectors (radians) with norm <= pi; the
  matrix is the exponential map (Rodrigues);
* sampling is bilinear with zero fill outside the image, paired with
  an explicit 0/1 validity mask. A reprojected point is valid iff its
  camera-frame depth is positive and it lands inside
  [0, W-1] x [0, H-1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KernelError, ShapeMismatchError

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise KernelError(f"non-finite intrinsics {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise KernelError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: axis-angle rotation (radians) plus translation (m).

    The rotation vector is canonicalized to norm <= pi on construction,
    so every rotation has a single representative.
    """

    theta: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(3).copy()
        trans = np.asarray(self.trans, dtype=np.float64).reshape(3).copy()
        if not (np.isfinite(theta).all() and np.isfinite(trans).all()):
            raise KernelError("non-finite pose parameters")
        angle = float(np.linalg.norm(theta))
        if angle > np.pi:
            wrapped = np.fmod(angle, _TWO_PI)
            if wrapped > np.pi:
                wrapped -= _TWO_PI  # same axis, negative equivalent angle
            theta = theta * (wrapped / angle)
        theta.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "trans", trans)

    def is_identity(self) -> bool:
        return not (self.theta.any() or self.trans.any())


def identity_pose() -> Pose:
    return Pose(np.zeros(3), np.zeros(3))


def _skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def pose_to_matrix(pose: Pose):
    """Exponential map: axis-angle -> (R, t) with R orthonormal, det +1.

    Small angles use the series of sin(x)/x and (1-cos x)/x^2 so the
    map is exact at theta = 0 and smooth through it.
    """
    theta = pose.theta
    sq = float(theta @ theta)
    if sq < 1e-8:
        # sin(x)/x = 1 - x^2/6 (1 - x^2/20), (1-cos x)/x^2 = 1/2 - x^2/24 (1 - x^2/30)
        a = 1.0 - sq / 6.0 * (1.0 - sq / 20.0)
        b = 0.5 - sq / 24.0 * (1.0 - sq / 30.0)
    else:
        angle = np.sqrt(sq)
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / sq
    k = _skew(theta)
    rot = np.eye(3) + a * k + b * (k @ k)
    return rot, pose.trans.copy()


def matrix_to_pose(rot, trans) -> Pose:
    """Logarithm map: (R, t) -> Pose with rotation norm <= pi."""
    rot = np.asarray(rot, dtype=np.float64)
    vec = 0.5 * np.array([
        rot[2, 1] - rot[1, 2],
        rot[0, 2] - rot[2, 0],
        rot[1, 0] - rot[0, 1],
    ])  # = sin(angle) * axis
    cos_angle = np.clip((np.trace(rot) - 1.0) * 0.5, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle < 1e-7:
        theta = vec * (1.0 + angle * angle / 6.0)
    elif angle < np.pi - 1e-6:
        theta = vec * (angle / np.sin(angle))
    else:
        # Near pi the skew part vanishes; recover the axis from the
        # symmetric part, then fix signs against the skew residue.
        sym = 0.5 * (rot + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(sym), 0.0, None))
        major = int(np.argmax(axis))
        if axis[major] > 0:
            for i in range(3):
                if i != major and sym[major, i] < 0:
                    axis[i] = -axis[i]
        norm = np.linalg.norm(axis)
        if norm == 0:
            theta = np.zeros(3)
        else:
            axis = axis / norm
            if vec @ axis < 0:
                axis = -axis
            theta = axis * angle
    return Pose(theta, np.asarray(trans, dtype=np.float64).reshape(3))


def invert_pose(pose: Pose) -> Pose:
    """Inverse transform: compose_pose(p, invert_pose(p)) is the identity."""
    rot, trans = pose_to_matrix(pose)
    return Pose(-pose.theta, -(rot.T @ trans))


def compose_pose(outer: Pose, inner: Pose) -> Pose:
    """Transform applying `inner` first, then `outer`."""
    r1, t1 = pose_to_matrix(outer)
    r2, t2 = pose_to_matrix(inner)
    return matrix_to_pose(r1 @ r2, r1 @ t2 + t1)


def _bilinear_gather(source, us, vs, valid):
    """Sample source (C, H, W) at float coords (us, vs) where valid.

    Callers guarantee valid coords lie in [0, W-1] x [0, H-1]; samples
    at invalid pixels are zero. Returns float64 (C, H, W).
    """
    channels, height, width = source.shape
    u = np.where(valid, us, 0.0)
    v = np.where(valid, vs, 0.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    fu = u - u0
    fv = v - v0
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    u0 = np.clip(u0, 0, width - 1)
    v0 = np.clip(v0, 0, height - 1)

    w00 = (1.0 - fu) * (1.0 - fv)
    w10 = fu * (1.0 - fv)
    w01 = (1.0 - fu) * fv
    w11 = fu * fv

    flat = source.reshape(channels, -1).astype(np.float64, copy=False)
    i00 = (v0 * width + u0).ravel()
    i10 = (v0 * width + u1).ravel()
    i01 = (v1 * width + u0).ravel()
    i11 = (v1 * width + u1).ravel()
    out = (flat[:, i00] * w00.ravel()
           + flat[:, i10] * w10.ravel()
           + flat[:, i01] * w01.ravel()
           + flat[:, i11] * w11.ravel())
    out = out.reshape(channels, height, width)
    return out * valid[None, :, :]


def warp(source, pose: Pose, depth, intrinsics: Intrinsics):
    """Inverse-warp `source` into the target frame.

    Each target pixel is back-projected with its depth, moved by the
    pose into the source frame, projected, and sampled bilinearly.

    Args:
        source: (C, H, W) or (H, W) grid to pull samples from.
        pose: target-to-source transform.
        depth: (H, W) per-pixel target depth, or a positive scalar
            (one plane-sweep candidate).
        intrinsics: shared pinhole model of both frames.

    Returns:
        (warped, valid_mask): warped float32 with the source's shape,
        zero where invalid; valid_mask float32 (H, W) of {0, 1}. The
        mask depends only on geometry, never on source values.

    Raises:
        ShapeMismatchError: depth shape does not match the image.
        KernelError: non-positive depth.
    """
    src = np.asarray(source, dtype=np.float32)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[None, :, :]
    if src.ndim != 3:
        raise ShapeMismatchError(f"source must be (C, H, W) or (H, W), got {src.shape}")
    _, height, width = src.shape

    if np.isscalar(depth) or np.ndim(depth) == 0:
        d = float(depth)
        if not np.isfinite(d) or d <= 0:
            raise KernelError(f"depth candidate must be positive, got {d}")
        depth_map = np.full((height, width), d, dtype=np.float64)
    else:
        depth_map = np.asarray(depth, dtype=np.float64)
        if depth_map.shape != (height, width):
            raise ShapeMismatchError(
                f"depth {depth_map.shape} does not match image {(height, width)}")
        if not np.isfinite(depth_map).all() or (depth_map <= 0).any():
            raise KernelError("depth must be finite and positive at every pixel")

    if pose.is_identity():
        # The correspondence is exactly the identity for any positive
        # depth; skip resampling so the output is bit-identical.
        warped = src.copy()
        mask = np.ones((height, width), dtype=np.float32)
        return (warped[0] if squeeze else warped), mask

    rot, trans = pose_to_matrix(pose)
    us, vs = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    rx = (us - intrinsics.cx) / intrinsics.fx
    ry = (vs - intrinsics.cy) / intrinsics.fy
    x = depth_map * rx
    y = depth_map * ry
    z = depth_map
    xs = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
    ys = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
    zs = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]

    in_front = zs > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        up = intrinsics.fx * xs / zs + intrinsics.cx
        vp = intrinsics.fy * ys / zs + intrinsics.cy
    valid = (in_front
             & (up >= 0.0) & (up <= width - 1.0)
             & (vp >= 0.0) & (vp <= height - 1.0))

    warped = _bilinear_gather(src, up, vp, valid).astype(np.float32)
    mask = valid.astype(np.float32)
    return (warped[0] if squeeze else warped), mask
