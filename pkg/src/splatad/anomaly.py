"""Anomaly maps from query vs pose-aligned rendering.

Features are a deterministic hand-crafted stand-in for a pretrained CNN,
behind ``FeatureExtractor`` so a learned extractor can be plugged in. The
default builds a Gaussian pyramid and per level stacks six channels:
RGB, gradient magnitude, and gradient orientation as (sin, cos) weighted
by magnitude; each channel is z-normalized per image. Discolorations show
up in the color channels, missing or excess material in the structural
ones.

The score map is the per-pixel squared feature distance per level,
bilinearly upsampled to query resolution, averaged across levels with
equal weights, and optionally Gaussian-smoothed. The image score
aggregates the smoothed map (max by default, mean of the top fraction as
an alternative).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import EmptyMap, ImageTooSmall, ShapeMismatch
from .pose import resize_bilinear


@dataclass
class AnomalyConfig:
    levels: int = 3
    smooth_sigma: float = 4.0      # px; 0 disables smoothing
    aggregate: str = "max"         # or "top_mean"
    top_fraction: float = 0.001
    znorm_eps: float = 1e-8


@dataclass
class FeaturePyramid:
    levels: list[np.ndarray]       # each (H_l, W_l, D)
    scales: list[int]              # downsample factor per level


@dataclass
class AnomalyResult:
    score_map: np.ndarray
    image_score: float
    aligned_render: np.ndarray


class FeatureExtractor:
    def extract(self, img: np.ndarray) -> FeaturePyramid:
        raise NotImplementedError


def _level_features(img: np.ndarray, eps: float) -> np.ndarray:
    gray = img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    # orientation as magnitude-weighted (sin, cos); zero where flat
    safe = np.maximum(mag, eps)
    feats = np.stack(
        [img[:, :, 0], img[:, :, 1], img[:, :, 2], mag, gy / safe * mag, gx / safe * mag],
        axis=2,
    )
    mean = feats.reshape(-1, feats.shape[2]).mean(axis=0)
    std = feats.reshape(-1, feats.shape[2]).std(axis=0)
    return (feats - mean) / (std + eps)


class HandcraftedExtractor(FeatureExtractor):
    def __init__(self, cfg: AnomalyConfig | None = None):
        self.cfg = cfg or AnomalyConfig()

    def extract(self, img: np.ndarray) -> FeaturePyramid:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        min_size = 2 ** (self.cfg.levels - 1) * 4
        if min(img.shape[:2]) < min_size:
            raise ImageTooSmall(
                f"{img.shape[0]}x{img.shape[1]} image under {self.cfg.levels}-level pyramid"
            )
        levels, scales = [], []
        current = img
        for lvl in range(self.cfg.levels):
            levels.append(_level_features(current, self.cfg.znorm_eps))
            scales.append(2 ** lvl)
            if lvl + 1 < self.cfg.levels:
                smoothed = gaussian_filter(current, sigma=(1.0, 1.0, 0.0))
                current = smoothed[::2, ::2]
        return FeaturePyramid(levels=levels, scales=scales)


def extract_features(
    img: np.ndarray, extractor: FeatureExtractor | None = None
) -> FeaturePyramid:
    return (extractor or HandcraftedExtractor()).extract(img)


def score_map(
    query: np.ndarray,
    aligned: np.ndarray,
    cfg: AnomalyConfig | None = None,
    extractor: FeatureExtractor | None = None,
) -> np.ndarray:
    """Per-pixel anomaly scores (>= 0) at the query resolution."""
    cfg = cfg or AnomalyConfig()
    query = np.asarray(query, dtype=np.float64)
    aligned = np.asarray(aligned, dtype=np.float64)
    if query.shape != aligned.shape:
        raise ShapeMismatch(f"query {query.shape} vs aligned {aligned.shape}")
    extractor = extractor or HandcraftedExtractor(cfg)
    pq = extractor.extract(query)
    pa = extractor.extract(aligned)
    H, W = query.shape[:2]
    acc = np.zeros((H, W))
    for fq, fa in zip(pq.levels, pa.levels):
        if fq.shape != fa.shape:
            raise ShapeMismatch("feature pyramids disagree between images")
        dist = np.sum((fq - fa) ** 2, axis=2)
        acc += dist if dist.shape == (H, W) else resize_bilinear(dist, H, W)
    acc /= len(pq.levels)
    if cfg.smooth_sigma > 0:
        acc = gaussian_filter(acc, cfg.smooth_sigma)
    return acc


def image_score(score: np.ndarray, cfg: AnomalyConfig | None = None) -> float:
    """Scalar anomaly score for one image."""
    cfg = cfg or AnomalyConfig()
    score = np.asarray(score, dtype=np.float64)
    if score.size == 0:
        raise EmptyMap("empty score map")
    if cfg.aggregate == "top_mean":
        k = max(1, int(round(score.size * cfg.top_fraction)))
        part = np.partition(score.ravel(), score.size - k)[score.size - k:]
        return float(part.mean())
    return float(score.max())


def detect(
    query: np.ndarray,
    aligned: np.ndarray,
    cfg: AnomalyConfig | None = None,
    extractor: FeatureExtractor | None = None,
) -> AnomalyResult:
    cfg = cfg or AnomalyConfig()
    m = score_map(query, aligned, cfg, extractor)
    return AnomalyResult(score_map=m, image_score=image_score(m, cfg), aligned_render=aligned)
