"""Numerical kernels for robust multi-frame depth estimation.

Closed-form pieces of a synthetic-to-real depth adaptation pipeline:
plane-sweep cost volumes over inverse-depth candidates, differentiable
depth histograms with a KL structure-prior loss, consistency-weighted
pseudo-label losses, stage objectives, the standard depth evaluation
protocol, and analytic plane scenes that act as ground-truth oracles
for all of it. Pure numpy/scipy; no training loops, no networks.
"""

from . import _threads  # noqa: F401  (RDK_THREADS cap; must precede numpy)

from .errors import KernelError, ShapeMismatchError, TensorFormatError
from .tensor_io import elementwise_stats, read_tensor, write_pgm, write_tensor
from .geometry import Intrinsics, Pose, compose_pose, identity_pose, invert_pose, \
    matrix_to_pose, pose_to_matrix, warp
from .cost_volume import CostVolume, DepthCandidates, DIFF_INVALID_COST, \
    DOT_INVALID_COST, best_depth, build_cost_volume, loss_cv
from .dist_prior import Histogram, HistogramSpec, SMOOTHING_FLOOR, \
    aggregate_reference, kl_loss, kl_loss_depth_grad, soft_histogram, \
    soft_histogram_grad, telescoped_mass
from .reweighting import ConsistencyMap, DEPTH_CLAMP, consistency_map, \
    loss_consistent_depth, loss_distill
from .losses import LossReport, LossWeights, assemble_real, assemble_syn, \
    loss_photometric, loss_pose, loss_smooth, ssim_map
from .metrics import EvalRange, MetricRow, evaluate, evaluate_batch
from .scene_oracle import CheckResult, RenderResult, SceneSpec, SelfCheckReport, \
    analytic_correspondence, finite_difference_grad, finite_difference_jacobian, \
    max_relative_error, plane_depth, render, selfcheck

__version__ = "0.1.0"

__all__ = [
    "KernelError", "ShapeMismatchError", "TensorFormatError",
    "read_tensor", "write_tensor", "elementwise_stats", "write_pgm",
    "Intrinsics", "Pose", "identity_pose", "pose_to_matrix", "matrix_to_pose",
    "invert_pose", "compose_pose", "warp",
    "DepthCandidates", "CostVolume", "build_cost_volume", "best_depth", "loss_cv",
    "DIFF_INVALID_COST", "DOT_INVALID_COST",
    "HistogramSpec", "Histogram", "soft_histogram", "soft_histogram_grad",
    "telescoped_mass", "kl_loss", "kl_loss_depth_grad", "aggregate_reference",
    "SMOOTHING_FLOOR",
    "ConsistencyMap", "consistency_map", "loss_distill", "loss_consistent_depth",
    "DEPTH_CLAMP",
    "LossWeights", "LossReport", "loss_photometric", "loss_smooth", "loss_pose",
    "assemble_syn", "assemble_real", "ssim_map",
    "EvalRange", "MetricRow", "evaluate", "evaluate_batch",
    "SceneSpec", "RenderResult", "render", "plane_depth", "analytic_correspondence",
    "selfcheck", "SelfCheckReport", "CheckResult",
    "finite_difference_grad", "finite_difference_jacobian", "max_relative_error",
]
