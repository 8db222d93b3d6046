"""Pose estimation for a query image of unknown viewpoint.

Coarse stage: the query is scored against every training view and the best
match's camera becomes the starting estimate. The default matcher is
normalized cross-correlation on Gaussian-blurred 64x64 grayscale
downsamples, behind the ``CoarseMatcher`` interface so a learned matcher
can be plugged in.

Fine stage: the camera stays fixed at the coarse estimate while a single
ScrewTransform applied to the whole cloud is optimized with Adam
(lr 1e-3, betas (0.9, 0.999)) on the combined photometric loss, gradients
flowing image -> splats -> screw parameters. The transform starts at the
identity as twist coordinates omega = v = 0 with screw magnitude
``init_theta``; theta is a free scale for the optimizer, and a larger
start shortens the distance omega and v must travel per unit of recovered
motion (init_theta = 2 recovers 10 degree / 5%-radius offsets within
k = 175 steps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .errors import EmptyTrainingSet
from .loss import LossConfig, combined
from .optim import AdamState, adam_step
from .render import RenderConfig, render, render_backward, render_with_state
from .scene import Camera, GaussianCloud
from .se3 import ScrewTransform, apply_to_cloud, pose_jacobian, to_matrix


@dataclass
class PoseConfig:
    k: int = 175
    lr: float = 1e-3
    init_theta: float = 2.0
    matcher_size: int = 64
    matcher_blur: float = 1.0
    early_stop: bool = False          # optional plateau stop, off by default
    early_stop_window: int = 25
    early_stop_rel: float = 1e-4
    clip_norm: float | None = None


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling to an exact output size (align-corners-free)."""
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    ys = (np.arange(height) + 0.5) * H / height - 0.5
    xs = (np.arange(width) + 0.5) * W / width - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([g.ravel() for g in grid])
    if img.ndim == 2:
        return map_coordinates(img, coords, order=1, mode="nearest").reshape(height, width)
    out = np.stack(
        [
            map_coordinates(img[:, :, c], coords, order=1, mode="nearest").reshape(
                height, width
            )
            for c in range(img.shape[2])
        ],
        axis=2,
    )
    return out


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114


class CoarseMatcher:
    """Scores a query against training images; higher is better."""

    def scores(self, query: np.ndarray, train_images: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError


class NccMatcher(CoarseMatcher):
    """Normalized cross-correlation on blurred grayscale downsamples.

    Reference signatures are cached per image object, so scoring many
    queries against the same training set costs one downsample per query.
    """

    def __init__(self, size: int = 64, blur_sigma: float = 1.0):
        self.size = size
        self.blur_sigma = blur_sigma
        self._ref_key: tuple[int, ...] | None = None
        self._ref: np.ndarray | None = None

    def _signature(self, img: np.ndarray) -> np.ndarray:
        g = resize_bilinear(_to_gray(img), self.size, self.size)
        if self.blur_sigma > 0:
            g = gaussian_filter(g, self.blur_sigma)
        g = g - g.mean()
        n = np.linalg.norm(g)
        return (g / n if n > 0 else g).ravel()

    def prepare(self, train_images: list[np.ndarray]) -> None:
        self._ref = np.stack([self._signature(t) for t in train_images])
        self._ref_key = tuple(map(id, train_images))

    def scores(self, query: np.ndarray, train_images: list[np.ndarray]) -> np.ndarray:
        q = self._signature(query)
        if self._ref_key != tuple(map(id, train_images)):
            self.prepare(train_images)
        return self._ref @ q


def coarse_pose_index(
    query: np.ndarray,
    train_views: list[tuple[np.ndarray, Camera]],
    matcher: CoarseMatcher | None = None,
) -> int:
    if len(train_views) == 0:
        raise EmptyTrainingSet("no training views to match against")
    matcher = matcher or NccMatcher()
    s = matcher.scores(query, [img for img, _ in train_views])
    return int(np.argmax(s))  # argmax keeps the lowest index on ties


def coarse_pose(
    query: np.ndarray,
    train_views: list[tuple[np.ndarray, Camera]],
    matcher: CoarseMatcher | None = None,
) -> Camera:
    """Camera of the best-matching training view (ties: lowest view index)."""
    return train_views[coarse_pose_index(query, train_views, matcher)][1]


@dataclass
class PoseEstimate:
    camera: Camera                 # coarse camera, held fixed
    transform: ScrewTransform      # refined scene motion
    effective_pose: np.ndarray     # 4x4 world-to-camera for metric evaluation
    loss_trace: list[float]
    steps: int
    degraded: bool = False
    adam: AdamState | None = None  # kept so refinement can resume


def effective_pose_matrix(camera: Camera, transform: ScrewTransform) -> np.ndarray:
    """World-to-camera matrix of (camera ∘ scene transform).

    Rendering the transformed cloud from ``camera`` equals rendering the
    untouched cloud from this pose, so it is directly comparable to
    ground-truth camera extrinsics.
    """
    T = to_matrix(transform)
    E = camera.world_to_camera_matrix()
    return E @ T


def refine_pose(
    query: np.ndarray,
    coarse: Camera,
    cloud: GaussianCloud,
    k: int | None = None,
    loss_cfg: LossConfig | None = None,
    pose_cfg: PoseConfig | None = None,
    render_cfg: RenderConfig | None = None,
    resume: PoseEstimate | None = None,
) -> PoseEstimate:
    """Iteratively align the cloud to the query; k = 0 returns the coarse pose.

    On a non-finite loss the best parameters seen so far are returned with
    ``degraded=True``. Passing a previous estimate as ``resume`` continues
    its optimizer state, so k steps followed by k' more equal one (k + k')
    run.
    """
    pose_cfg = pose_cfg or PoseConfig()
    loss_cfg = loss_cfg or LossConfig()
    render_cfg = render_cfg or RenderConfig()
    k = pose_cfg.k if k is None else int(k)

    if resume is not None:
        params = resume.transform.as_vector()
        adam = resume.adam.copy() if resume.adam is not None else AdamState(
            lr=pose_cfg.lr, clip_norm=pose_cfg.clip_norm
        )
        trace = list(resume.loss_trace)
        prev_steps = resume.steps
        coarse = resume.camera
    else:
        params = ScrewTransform(
            omega=np.zeros(3), v=np.zeros(3), theta=pose_cfg.init_theta
        ).as_vector()
        adam = AdamState(lr=pose_cfg.lr, clip_norm=pose_cfg.clip_norm)
        trace = []
        prev_steps = 0

    degraded = False
    best_params = params.copy()
    best_loss = math.inf

    for _ in range(k):
        t = ScrewTransform.from_vector(params)
        moved = apply_to_cloud(t, cloud)
        image, state = render_with_state(moved, coarse, render_cfg)
        loss_val, grad_img = combined(image, query, loss_cfg)
        if not math.isfinite(loss_val):
            degraded = True
            params = best_params
            break
        trace.append(loss_val)
        if loss_val < best_loss:
            best_loss = loss_val
            best_params = params.copy()
        if loss_val < 1e-15:
            # exact match up to float noise; a step could only wander off
            g = np.zeros(7)
        else:
            grads = render_backward(moved, coarse, render_cfg, grad_img, state)
            g_omega, g_v, g_theta = pose_jacobian(t, cloud, grads.means, grads.rotations)
            g = np.concatenate([g_omega, g_v, [g_theta]])
        params = adam_step(adam, params, g)
        if pose_cfg.early_stop and len(trace) > pose_cfg.early_stop_window:
            w = pose_cfg.early_stop_window
            prev = np.mean(trace[-2 * w:-w]) if len(trace) >= 2 * w else trace[0]
            if prev - np.mean(trace[-w:]) < pose_cfg.early_stop_rel * max(prev, 1e-12):
                break

    transform = ScrewTransform.from_vector(params)
    return PoseEstimate(
        camera=coarse,
        transform=transform,
        effective_pose=effective_pose_matrix(coarse, transform),
        loss_trace=trace,
        steps=prev_steps + (len(trace) - len(resume.loss_trace) if resume else len(trace)),
        degraded=degraded,
        adam=adam,
    )


def render_aligned(
    estimate: PoseEstimate, cloud: GaussianCloud, render_cfg: RenderConfig | None = None
) -> np.ndarray:
    """Render the transformed cloud from the fixed coarse camera."""
    render_cfg = render_cfg or RenderConfig()
    return render(apply_to_cloud(estimate.transform, cloud), estimate.camera, render_cfg)
