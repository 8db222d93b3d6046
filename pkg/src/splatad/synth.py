"""Synthetic benchmark generator.

Builds procedural ground-truth scenes out of colored splat clusters,
renders posed train/test splits, and injects labeled anomalies with exact
ground-truth masks, standing in for a captured multi-view dataset at desk
scale. Training poses are uniformly distributed on a sphere around the
object; test poses are drawn the same way (``uniform_sphere``) or along a
circular orbit (``orbit``).

Anomalous test images render from a mutated clone of the clean cloud; the
mask marks pixels where the mutated and clean renders differ by more than
``mask_threshold`` in any channel, morphologically closed with a 3x3
structuring element. Anomalies that end up fully occluded are resampled
deterministically.

Everything is deterministic per seed. ``write_dataset`` emits the on-disk
layout consumed by the CLI: transforms_{train,test}.json in the
NeRF-synthetic convention, 8-bit PNG images, PNG masks and meta.json.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_closing

from .io import load_png, load_transforms, save_ply, save_png, save_transforms
from .render import RenderConfig, render
from .scene import Camera, GaussianCloud


@dataclass
class SynthConfig:
    seed: int = 0
    n_primitives: int = 7
    splats_per_primitive: int = 16
    n_train_views: int = 210          # matches the usual per-category training size
    n_test_normal: int = 20
    n_test_anomalous: int = 20
    view_mode: str = "uniform_sphere"  # or "orbit"
    image_size: int = 400
    fov_x_deg: float = 45.0
    camera_distance: float = 3.0       # in units of scene radius
    anomaly_types: tuple[str, ...] = ("missing_cluster", "recolor_cluster", "extra_cluster")
    recolor_strength: tuple[float, float] = (0.35, 0.7)
    extra_size: tuple[float, float] = (0.5, 0.9)   # relative to primitive sizes
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mask_threshold: float = 1e-3
    min_mask_pixels: int = 4
    sparsity: float = 1.0

    def __post_init__(self) -> None:
        if min(self.n_primitives, self.n_train_views, self.image_size) <= 0:
            raise ValueError("counts must be positive")
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError("sparsity must be in (0, 1]")
        if self.view_mode not in ("uniform_sphere", "orbit"):
            raise ValueError(f"unknown view_mode {self.view_mode!r}")


@dataclass
class Cluster:
    start: int
    end: int
    center: np.ndarray
    size: float
    base_color: np.ndarray


@dataclass
class TestItem:
    image: np.ndarray
    camera: Camera
    mask: np.ndarray              # HxW bool
    label: int                    # 0 normal, 1 anomalous
    anomaly: dict | None = None


@dataclass
class SynthScene:
    cloud_gt: GaussianCloud
    clusters: list[Cluster]
    train: list[tuple[np.ndarray, Camera]]
    test_normal: list[TestItem]
    test_anomalous: list[TestItem]
    config: SynthConfig

    @property
    def test(self) -> list[TestItem]:
        return self.test_normal + self.test_anomalous


def _build_clusters(cfg: SynthConfig, rng: np.random.Generator):
    means, logs, quats, logits, colors = [], [], [], [], []
    clusters: list[Cluster] = []
    palette = rng.permutation(
        np.array(
            [
                [0.85, 0.2, 0.15], [0.2, 0.65, 0.9], [0.95, 0.75, 0.1],
                [0.25, 0.8, 0.3], [0.75, 0.3, 0.85], [0.95, 0.5, 0.2],
                [0.3, 0.35, 0.9], [0.6, 0.85, 0.75], [0.9, 0.4, 0.55],
                [0.5, 0.6, 0.2],
            ]
        )
    )
    placed: list[tuple[np.ndarray, float]] = []
    for p in range(cfg.n_primitives):
        size = rng.uniform(0.15, 0.26)
        center = rng.uniform(-0.55, 0.55, size=3)
        for _attempt in range(64):  # keep primitives from swallowing each other
            if all(
                np.linalg.norm(center - c0) > 0.75 * (size + s0) for c0, s0 in placed
            ):
                break
            center = rng.uniform(-0.55, 0.55, size=3)
        placed.append((center, size))
        base = np.clip(palette[p % len(palette)] + rng.normal(size=3) * 0.05, 0.02, 0.98)
        start = len(means)
        for _ in range(cfg.splats_per_primitive):
            means.append(center + rng.normal(size=3) * size * 0.45)
            logs.append(
                math.log(rng.uniform(0.35, 0.8) * size * 0.35) + rng.normal(size=3) * 0.2
            )
            quats.append(rng.normal(size=4))
            logits.append(rng.normal() * 0.5 + 2.5)
            colors.append(np.clip(base + rng.normal(size=3) * 0.06, 0.02, 0.98))
        clusters.append(Cluster(start, len(means), center, size, base))
    cloud = GaussianCloud(
        means=np.array(means),
        log_scales=np.array(logs),
        rotations=np.array(quats),
        opacity_logits=np.array(logits),
        colors=np.array(colors),
    )
    return cloud, clusters


def _sphere_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _orbit_directions(n: int, elevation_deg: float = 30.0) -> np.ndarray:
    az = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    el = np.deg2rad(elevation_deg)
    return np.stack(
        [np.cos(el) * np.cos(az), np.sin(el) * np.ones(n), np.cos(el) * np.sin(az)], axis=1
    )


def _camera(direction: np.ndarray, dist: float, cfg: SynthConfig) -> Camera:
    return Camera.look_at(
        eye=direction * dist,
        target=np.zeros(3),
        up=np.array([0.0, 1.0, 0.0]),
        width=cfg.image_size,
        height=cfg.image_size,
        fov_x=np.deg2rad(cfg.fov_x_deg),
        near=0.05 * dist,
        far=10.0 * dist,
    )


def sparsify(views: list, fraction: float) -> list:
    """Deterministic uniform-stride subset; fraction 1.0 is the identity."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(views)
    count = max(1, round(n * fraction))
    idx = (np.arange(count) * n / count).astype(int)
    return [views[i] for i in idx]


def _mutate(
    cloud: GaussianCloud,
    clusters: list[Cluster],
    cfg: SynthConfig,
    rng: np.random.Generator,
) -> tuple[GaussianCloud, dict]:
    kind = cfg.anomaly_types[int(rng.integers(len(cfg.anomaly_types)))]
    ci = int(rng.integers(len(clusters)))
    c = clusters[ci]
    if kind == "missing_cluster":
        keep = np.ones(len(cloud), dtype=bool)
        keep[c.start:c.end] = False
        return cloud.subset(keep), {"type": kind, "cluster": ci}
    if kind == "recolor_cluster":
        strength = float(rng.uniform(*cfg.recolor_strength))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        # flip channels that would clip, so the applied shift keeps its size
        room_up = 0.98 - c.base_color
        room_down = c.base_color - 0.02
        flip = np.where(direction > 0, room_up, room_down) < np.abs(direction) * strength
        direction = np.where(flip, -direction, direction)
        mutated = cloud.copy()
        mutated.colors[c.start:c.end] = np.clip(
            mutated.colors[c.start:c.end] + strength * direction, 0.02, 0.98
        )
        return mutated, {"type": kind, "cluster": ci, "strength": strength}
    # extra_cluster: a small foreign blob attached near an existing primitive
    rel = float(rng.uniform(*cfg.extra_size))
    size = rel * c.size
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    center = c.center + direction * c.size * 1.2
    color = np.clip(rng.uniform(0.1, 0.9, size=3), 0.02, 0.98)
    k = max(4, cfg.splats_per_primitive // 2)
    means = center + rng.normal(size=(k, 3)) * size * 0.4
    mutated = GaussianCloud(
        means=np.concatenate([cloud.means, means]),
        log_scales=np.concatenate(
            [cloud.log_scales,
             np.log(rng.uniform(0.35, 0.8, size=(k, 1)) * size * 0.35)
             + rng.normal(size=(k, 3)) * 0.2]
        ),
        rotations=np.concatenate([cloud.rotations, rng.normal(size=(k, 4))]),
        opacity_logits=np.concatenate([cloud.opacity_logits, rng.normal(size=k) * 0.5 + 2.5]),
        colors=np.concatenate([cloud.colors, np.clip(color + rng.normal(size=(k, 3)) * 0.05, 0.02, 0.98)]),
        scene_radius=cloud.scene_radius,
    )
    return mutated, {"type": kind, "cluster": ci, "size": size}


def anomaly_mask(
    clean: np.ndarray, mutated: np.ndarray, threshold: float = 1e-3
) -> np.ndarray:
    """Pixels where renders differ beyond threshold, 3x3 morphological closing."""
    diff = np.abs(mutated - clean).max(axis=2) > threshold
    return binary_closing(diff, structure=np.ones((3, 3), dtype=bool))


def generate_scene(cfg: SynthConfig) -> SynthScene:
    rng = np.random.default_rng(cfg.seed)
    cloud, clusters = _build_clusters(cfg, rng)
    dist = cfg.camera_distance * cloud.scene_radius
    rcfg = RenderConfig(background=np.array(cfg.background))

    train_dirs = _sphere_directions(cfg.n_train_views, rng)
    train = [
        (render(cloud, cam, rcfg), cam)
        for cam in (_camera(d, dist, cfg) for d in train_dirs)
    ]
    train = sparsify(train, cfg.sparsity)

    n_test = cfg.n_test_normal + cfg.n_test_anomalous
    if cfg.view_mode == "orbit":
        test_dirs = _orbit_directions(n_test)
    else:
        test_dirs = _sphere_directions(n_test, rng)

    test_normal: list[TestItem] = []
    for d in test_dirs[: cfg.n_test_normal]:
        cam = _camera(d, dist, cfg)
        img = render(cloud, cam, rcfg)
        test_normal.append(
            TestItem(img, cam, np.zeros(img.shape[:2], dtype=bool), 0, None)
        )

    test_anomalous: list[TestItem] = []
    for d in test_dirs[cfg.n_test_normal:]:
        cam = _camera(d, dist, cfg)
        clean = render(cloud, cam, rcfg)
        for _attempt in range(16):
            mutated, info = _mutate(cloud, clusters, cfg, rng)
            img = render(mutated, cam, rcfg)
            mask = anomaly_mask(clean, img, cfg.mask_threshold)
            if mask.sum() >= cfg.min_mask_pixels:
                break
        test_anomalous.append(TestItem(img, cam, mask, 1, info))

    return SynthScene(cloud, clusters, train, test_normal, test_anomalous, cfg)


def write_dataset(scene: SynthScene, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = scene.config

    train_frames = []
    for i, (img, cam) in enumerate(scene.train):
        name = f"./train/r_{i:03d}"
        save_png(img, out / f"train/r_{i:03d}.png")
        train_frames.append((name, cam))
    save_transforms(out / "transforms_train.json", train_frames)

    test_frames = []
    frames_meta = []
    for i, item in enumerate(scene.test):
        name = f"./test/r_{i:03d}"
        save_png(item.image, out / f"test/r_{i:03d}.png")
        save_png(item.mask.astype(np.float64), out / f"masks/r_{i:03d}.png")
        test_frames.append((name, item.camera))
        frames_meta.append({"index": i, "label": item.label, "anomaly": item.anomaly})
    save_transforms(out / "transforms_test.json", test_frames)

    save_ply(scene.cloud_gt, out / "cloud_gt.ply")
    meta = {
        "seed": cfg.seed,
        "scene_radius": scene.cloud_gt.scene_radius,
        "background": list(cfg.background),
        "image_size": cfg.image_size,
        "view_mode": cfg.view_mode,
        "frames": frames_meta,
    }
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, indent=1)
    return out


@dataclass
class Dataset:
    train: list[tuple[np.ndarray, Camera]]
    test: list[TestItem]
    scene_radius: float
    background: np.ndarray
    meta: dict


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path / "meta.json") as f:
        meta = json.load(f)
    size = int(meta["image_size"])

    train = []
    for name, cam in load_transforms(path / "transforms_train.json", size, size):
        train.append((load_png(path / (name.lstrip("./") + ".png")), cam))
    test = []
    frames = {fr["index"]: fr for fr in meta["frames"]}
    for i, (name, cam) in enumerate(load_transforms(path / "transforms_test.json", size, size)):
        img = load_png(path / (name.lstrip("./") + ".png"))
        mask = load_png(path / f"masks/r_{i:03d}.png") > 0.5
        fr = frames[i]
        test.append(TestItem(img, cam, mask, int(fr["label"]), fr["anomaly"]))
    return Dataset(
        train=train,
        test=test,
        scene_radius=float(meta["scene_radius"]),
        background=np.array(meta["background"], dtype=np.float64),
        meta=meta,
    )


def scene_as_dataset(scene: SynthScene) -> Dataset:
    """In-memory Dataset view of a generated scene (no quantization)."""
    return Dataset(
        train=scene.train,
        test=scene.test,
        scene_radius=scene.cloud_gt.scene_radius,
        background=np.array(scene.config.background, dtype=np.float64),
        meta={"seed": scene.config.seed, "image_size": scene.config.image_size},
    )
