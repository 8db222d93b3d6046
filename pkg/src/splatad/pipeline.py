"""End-to-end stages shared by the CLI and the benchmark suite.

``detect_dataset`` runs coarse pose -> refinement -> aligned rendering ->
anomaly scoring for every test view of a dataset against a fitted cloud,
optionally across a thread pool (queries are independent and the cloud is
read-only, so results are identical for any worker count).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anomaly import AnomalyConfig, detect as detect_anomaly
from .loss import LossConfig
from .metrics import EvalReport, evaluate_categories, rotation_error, translation_error
from .pose import (
    NccMatcher,
    PoseConfig,
    PoseEstimate,
    coarse_pose_index,
    refine_pose,
    render_aligned,
)
from .render import RenderConfig
from .scene import Camera, GaussianCloud, rotmat_to_quat
from .synth import Dataset, TestItem


@dataclass
class QueryResult:
    index: int
    label: int
    image_score: float
    score_map: np.ndarray
    aligned: np.ndarray
    estimate: PoseEstimate
    coarse_index: int
    rotation_err: float
    translation_err: float
    seconds: float
    anomaly: dict | None = None


def pose_errors_vs_camera(effective_pose: np.ndarray, gt: Camera) -> tuple[float, float]:
    R_eff = effective_pose[:3, :3]
    t_eff = effective_pose[:3, 3]
    c_eff = -R_eff.T @ t_eff
    rot = rotation_error(rotmat_to_quat(R_eff), rotmat_to_quat(gt.rotation))
    return rot, translation_error(c_eff, gt.center)


def process_query(
    item: TestItem,
    index: int,
    cloud: GaussianCloud,
    train_views: list[tuple[np.ndarray, Camera]],
    k: int,
    render_cfg: RenderConfig,
    loss_cfg: LossConfig,
    pose_cfg: PoseConfig,
    anomaly_cfg: AnomalyConfig,
    matcher: NccMatcher | None = None,
) -> QueryResult:
    t0 = time.perf_counter()
    ci = coarse_pose_index(item.image, train_views, matcher)
    est = refine_pose(
        item.image, train_views[ci][1], cloud, k=k,
        loss_cfg=loss_cfg, pose_cfg=pose_cfg, render_cfg=render_cfg,
    )
    aligned = render_aligned(est, cloud, render_cfg)
    res = detect_anomaly(item.image, aligned, anomaly_cfg)
    rot, tr = pose_errors_vs_camera(est.effective_pose, item.camera)
    return QueryResult(
        index=index,
        label=item.label,
        image_score=res.image_score,
        score_map=res.score_map,
        aligned=aligned,
        estimate=est,
        coarse_index=ci,
        rotation_err=rot,
        translation_err=tr,
        seconds=time.perf_counter() - t0,
        anomaly=item.anomaly,
    )


def detect_dataset(
    cloud: GaussianCloud,
    dataset: Dataset,
    k: int = 175,
    render_cfg: RenderConfig | None = None,
    loss_cfg: LossConfig | None = None,
    pose_cfg: PoseConfig | None = None,
    anomaly_cfg: AnomalyConfig | None = None,
    threads: int = 1,
    queries: list[int] | None = None,
) -> list[QueryResult]:
    render_cfg = render_cfg or RenderConfig(background=dataset.background)
    loss_cfg = loss_cfg or LossConfig()
    pose_cfg = pose_cfg or PoseConfig()
    anomaly_cfg = anomaly_cfg or AnomalyConfig()
    matcher = NccMatcher()
    idxs = list(range(len(dataset.test))) if queries is None else list(queries)

    def work(i: int) -> QueryResult:
        return process_query(
            dataset.test[i], i, cloud, dataset.train, k,
            render_cfg, loss_cfg, pose_cfg, anomaly_cfg, matcher,
        )

    if threads <= 1:
        return [work(i) for i in idxs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, idxs))


def results_to_category(
    results: list[QueryResult], dataset: Dataset
) -> dict:
    return {
        "image_scores": [r.image_score for r in results],
        "image_labels": [r.label for r in results],
        "score_maps": [r.score_map for r in results],
        "gt_masks": [dataset.test[r.index].mask for r in results],
        "rotation_errors": [r.rotation_err for r in results],
        "translation_errors": [r.translation_err for r in results],
    }


def evaluate_results(
    per_category: dict[str, tuple[list[QueryResult], Dataset]]
) -> EvalReport:
    return evaluate_categories(
        {name: results_to_category(res, ds) for name, (res, ds) in per_category.items()}
    )


@dataclass
class AblateRow:
    k: int
    image_auroc: float
    pixel_auroc: float
    aupro: float
    rotation_error_mean: float
    translation_error_mean: float
    seconds_per_query: float


def ablate_k(
    cloud: GaussianCloud,
    dataset: Dataset,
    k_list: list[int],
    queries: list[int] | None = None,
    threads: int = 1,
    **kwargs,
) -> list[AblateRow]:
    from .metrics import aupro, auroc, pixel_auroc

    rows = []
    for k in k_list:
        results = detect_dataset(
            cloud, dataset, k=k, threads=threads, queries=queries, **kwargs
        )
        cat = results_to_category(results, dataset)
        rows.append(
            AblateRow(
                k=k,
                image_auroc=auroc(cat["image_scores"], cat["image_labels"]),
                pixel_auroc=pixel_auroc(cat["score_maps"], cat["gt_masks"]),
                aupro=aupro(cat["score_maps"], cat["gt_masks"]),
                rotation_error_mean=float(np.mean(cat["rotation_errors"])),
                translation_error_mean=float(np.mean(cat["translation_errors"])),
                seconds_per_query=float(np.mean([r.seconds for r in results])),
            )
        )
    return rows
