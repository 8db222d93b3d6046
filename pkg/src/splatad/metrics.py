"""Evaluation metrics: AUROC, AUPRO, and pose errors.

``auroc`` is the Mann-Whitney statistic (ties get half credit), computed
through average ranks. ``aupro`` integrates the mean per-region overlap
over the pooled false-positive rate up to ``fpr_limit`` (0.3, the common
convention) and normalizes by the limit; ground-truth regions are
8-connected components and each weighs the same regardless of size.
Rotations compare as Phi(q1, q2) = 2 arccos(|q1 . q2|), a metric on SO(3)
with values in [0, pi].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import NoAnomalousPixels, ShapeMismatch, SingleClass

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ShapeMismatch(f"{scores.shape} scores vs {labels.shape} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes present")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # average ranks over tied groups (1-based)
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [scores.size]])
    avg = 0.5 * (starts + 1 + ends)
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pixel_auroc(score_maps: list[np.ndarray], gt_masks: list[np.ndarray]) -> float:
    scores = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in score_maps])
    labels = np.concatenate([np.asarray(m).astype(bool).ravel() for m in gt_masks])
    return auroc(scores, labels.astype(int))


def _pro_thresholds(scores: np.ndarray, limit: int = 200) -> np.ndarray:
    uniq = np.unique(scores)
    even = np.linspace(scores.min(), scores.max(), limit)
    if uniq.size <= limit:
        return np.unique(np.concatenate([even, uniq]))
    return even


def aupro(
    score_maps: list[np.ndarray],
    gt_masks: list[np.ndarray],
    fpr_limit: float = 0.3,
    max_thresholds: int = 200,
) -> float:
    """Area under the per-region-overlap curve up to ``fpr_limit``, normalized."""
    if len(score_maps) != len(gt_masks):
        raise ShapeMismatch("score map and mask counts differ")
    components: list[np.ndarray] = []   # sorted scores inside each component
    neg_scores = []
    for sm, mask in zip(score_maps, gt_masks):
        sm = np.asarray(sm, dtype=np.float64)
        mask = np.asarray(mask).astype(bool)
        if sm.shape != mask.shape:
            raise ShapeMismatch(f"map {sm.shape} vs mask {mask.shape}")
        lab, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
        for comp in range(1, n + 1):
            components.append(np.sort(sm[lab == comp]))
        neg_scores.append(sm[~mask])
    if not components:
        raise NoAnomalousPixels("no anomalous component in any mask")
    neg = np.sort(np.concatenate(neg_scores))
    n_neg = neg.size
    if n_neg == 0:
        raise NoAnomalousPixels("no normal pixels to measure a false-positive rate")

    all_scores = np.concatenate([np.concatenate(components), neg])
    thresholds = _pro_thresholds(all_scores, max_thresholds)[::-1]  # descending

    # fpr(t) = fraction of negatives >= t; overlap_c(t) = fraction of comp >= t
    fpr = 1.0 - np.searchsorted(neg, thresholds, side="left") / n_neg
    pro = np.zeros_like(thresholds)
    for comp in components:
        pro += 1.0 - np.searchsorted(comp, thresholds, side="left") / comp.size
    pro /= len(components)

    return integrate_pro_curve(fpr, pro, fpr_limit)


def integrate_pro_curve(fpr: np.ndarray, pro: np.ndarray, fpr_limit: float) -> float:
    """Trapezoidal integral of a (fpr, pro) sweep clipped at ``fpr_limit``.

    Points are sorted by fpr with a (0, 0) anchor prepended; the value at
    the limit is linearly interpolated. Shared by the production path and
    the brute-force oracle so both integrate identically.
    """
    order = np.lexsort((pro, fpr))
    fx = np.concatenate([[0.0], fpr[order]])
    fy = np.concatenate([[0.0], pro[order]])
    if fx[-1] < fpr_limit:
        fx = np.append(fx, fpr_limit)
        fy = np.append(fy, fy[-1])
    y_at = float(np.interp(fpr_limit, fx, fy))
    keep = fx <= fpr_limit
    fx = np.append(fx[keep], fpr_limit)
    fy = np.append(fy[keep], y_at)
    return float(np.trapezoid(fy, fx) / fpr_limit)


def rotation_error(q1: np.ndarray, q2: np.ndarray) -> float:
    """Phi(q1, q2) = 2 arccos(|q1 . q2|) in [0, pi]; sign of q irrelevant."""
    q1 = np.asarray(q1, dtype=np.float64).reshape(4)
    q2 = np.asarray(q2, dtype=np.float64).reshape(4)
    q1 = q1 / np.linalg.norm(q1)
    q2 = q2 / np.linalg.norm(q2)
    return float(2.0 * np.arccos(min(1.0, abs(float(q1 @ q2)))))


def translation_error(p1: np.ndarray, p2: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(p1, dtype=np.float64) - np.asarray(p2, dtype=np.float64)))


@dataclass
class CategoryResult:
    name: str
    image_auroc: float
    pixel_auroc: float
    aupro: float
    rotation_error_mean: float
    translation_error_mean: float
    n_images: int


@dataclass
class EvalReport:
    image_auroc: float
    pixel_auroc: float
    aupro: float
    rotation_error_mean: float
    translation_error_mean: float
    categories: list[CategoryResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "image_auroc": self.image_auroc,
            "pixel_auroc": self.pixel_auroc,
            "aupro": self.aupro,
            "rotation_error_mean": self.rotation_error_mean,
            "translation_error_mean": self.translation_error_mean,
            "categories": [vars(c) for c in self.categories],
        }

    def table(self) -> str:
        header = f"{'category':<16}{'img AUROC':>10}{'px AUROC':>10}{'AUPRO':>8}{'rot err':>9}{'tr err':>9}{'n':>5}"
        lines = [header, "-" * len(header)]
        for c in self.categories:
            lines.append(
                f"{c.name:<16}{c.image_auroc:>10.4f}{c.pixel_auroc:>10.4f}{c.aupro:>8.4f}"
                f"{c.rotation_error_mean:>9.4f}{c.translation_error_mean:>9.4f}{c.n_images:>5d}"
            )
        lines.append(
            f"{'mean':<16}{self.image_auroc:>10.4f}{self.pixel_auroc:>10.4f}{self.aupro:>8.4f}"
            f"{self.rotation_error_mean:>9.4f}{self.translation_error_mean:>9.4f}"
        )
        return "\n".join(lines)


def evaluate_categories(per_category: dict[str, dict]) -> EvalReport:
    """Aggregate per-category arrays into an EvalReport (mean over categories).

    Each value dict needs: image_scores, image_labels, score_maps, gt_masks,
    and optional rotation_errors / translation_errors.
    """
    rows = []
    for name, d in per_category.items():
        rot = d.get("rotation_errors") or [float("nan")]
        tr = d.get("translation_errors") or [float("nan")]
        rows.append(
            CategoryResult(
                name=name,
                image_auroc=auroc(d["image_scores"], d["image_labels"]),
                pixel_auroc=pixel_auroc(d["score_maps"], d["gt_masks"]),
                aupro=aupro(d["score_maps"], d["gt_masks"]),
                rotation_error_mean=float(np.mean(rot)),
                translation_error_mean=float(np.mean(tr)),
                n_images=len(d["image_labels"]),
            )
        )
    return EvalReport(
        image_auroc=float(np.mean([r.image_auroc for r in rows])),
        pixel_auroc=float(np.mean([r.pixel_auroc for r in rows])),
        aupro=float(np.mean([r.aupro for r in rows])),
        rotation_error_mean=float(np.mean([r.rotation_error_mean for r in rows])),
        translation_error_mean=float(np.mean([r.translation_error_mean for r in rows])),
        categories=rows,
    )
