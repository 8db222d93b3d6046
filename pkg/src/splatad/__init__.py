"""Gaussian-splat scene fitting, differentiable screw-axis pose refinement,
and pose-agnostic anomaly detection."""

from .anomaly import AnomalyConfig, AnomalyResult, FeaturePyramid
from .fit import FitConfig, fit_cloud
from .loss import LossConfig, combined, l1, psnr, ssim
from .metrics import (
    EvalReport,
    aupro,
    auroc,
    pixel_auroc,
    rotation_error,
    translation_error,
)
from .optim import AdamState, adam_step
from .pose import (
    CoarseMatcher,
    NccMatcher,
    PoseConfig,
    PoseEstimate,
    coarse_pose,
    refine_pose,
    render_aligned,
)
from .render import RenderConfig, SplatGradients, render, render_backward, render_with_state
from .scene import Camera, Gaussian3D, GaussianCloud, covariance, project_gaussian
from .se3 import ScrewTransform, apply_to_cloud, pose_jacobian, rodrigues, skew, to_matrix
from .synth import SynthConfig, generate_scene, load_dataset, sparsify, write_dataset

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AnomalyConfig", "AnomalyResult", "Camera", "CoarseMatcher",
    "EvalReport", "FeaturePyramid", "FitConfig", "Gaussian3D", "GaussianCloud",
    "LossConfig", "NccMatcher", "PoseConfig", "PoseEstimate", "RenderConfig",
    "ScrewTransform", "SplatGradients", "SynthConfig", "adam_step",
    "apply_to_cloud", "aupro", "auroc", "coarse_pose", "combined", "covariance",
    "fit_cloud", "generate_scene", "l1", "load_dataset", "pixel_auroc",
    "pose_jacobian", "project_gaussian", "psnr", "refine_pose", "render",
    "render_aligned", "render_backward", "render_with_state", "rodrigues",
    "rotation_error", "skew", "sparsify", "ssim", "to_matrix",
    "translation_error", "write_dataset",
]
