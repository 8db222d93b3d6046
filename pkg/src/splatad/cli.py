"""Command-line pipeline: synth | fit | refine | detect | eval | ablate-k | render.

Every subcommand is rerunnable with identical outputs for identical inputs
and seed. Diagnostics go to stderr; machine-readable results land in files.
Exit codes: 0 success, 2 usage, otherwise the failing error class's code
(see errors.py).
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import click
import numpy as np

from .anomaly import AnomalyConfig
from .errors import ConfigError, SplatError
from .fit import FitConfig, fit_cloud
from .io import (
    load_ply,
    save_ply,
    save_png,
    save_score_map_png16,
    save_smap,
)
from .loss import LossConfig
from .metrics import EvalReport
from .pipeline import ablate_k as run_ablate_k
from .pipeline import detect_dataset, evaluate_results, pose_errors_vs_camera
from .pose import PoseConfig, coarse_pose_index, refine_pose, render_aligned
from .render import RenderConfig, render
from .synth import Dataset, SynthConfig, generate_scene, load_dataset, write_dataset

PAPER_FIT_ITERATIONS = 30000


@dataclass
class PipelineConfig:
    """Merged view of all stage configs plus global knobs."""

    seed: int = 0
    threads: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    pose: PoseConfig = field(default_factory=PoseConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        with open(path) as f:
            data = json.load(f)
        cfg = PipelineConfig()
        _apply_dict(cfg, data, context="")
        return cfg


def _apply_dict(obj, data: dict, context: str) -> None:
    valid = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        where = f"{context}{key}"
        if key not in valid:
            raise ConfigError(f"unknown config key: {where}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            _apply_dict(current, value, context=where + ".")
            if hasattr(current, "__post_init__"):
                try:
                    current.__post_init__()
                except ValueError as err:
                    raise ConfigError(f"{where}: {err}") from err
        elif isinstance(current, np.ndarray):
            setattr(obj, key, np.asarray(value, dtype=np.float64))
        elif isinstance(current, tuple):
            setattr(obj, key, tuple(value))
        else:
            setattr(obj, key, value)


def _fail(err: SplatError) -> None:
    click.echo(f"error: {err}", err=True)
    sys.exit(err.exit_code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SplatError as err:
            _fail(err)
        except ValueError as err:
            _fail(ConfigError(str(err)))

    return wrapper


def _info(msg: str) -> None:
    click.echo(msg, err=True)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON pipeline config; flags override its values.")
@click.option("--seed", type=int, default=None, help="Global seed override.")
@click.option("--threads", type=int, default=None, help="Worker pool cap.")
@click.pass_context
def main(ctx, config_path, seed, threads):
    """Gaussian-splat scene fitting, pose refinement and anomaly detection."""
    try:
        cfg = PipelineConfig.from_file(config_path) if config_path else PipelineConfig()
    except SplatError as err:
        _fail(err)
    except (ValueError, json.JSONDecodeError) as err:
        _fail(ConfigError(str(err)))
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
    ctx.obj = cfg


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--scenes", type=int, default=1, show_default=True)
@click.option("--image-size", type=int, default=None)
@click.option("--train-views", type=int, default=None)
@click.option("--test-normal", type=int, default=None)
@click.option("--test-anomalous", type=int, default=None)
@click.option("--sparsity", type=float, default=None)
@click.option("--view-mode", type=click.Choice(["uniform_sphere", "orbit"]), default=None)
@click.pass_obj
@handle_errors
def synth(cfg: PipelineConfig, out, scenes, image_size, train_views, test_normal,
          test_anomalous, sparsity, view_mode):
    """Generate synthetic benchmark dataset directories."""
    base = Path(out)
    for i in range(scenes):
        scfg = dataclasses.replace(cfg.synth)
        scfg.seed = cfg.seed + i
        if image_size is not None:
            scfg.image_size = image_size
        if train_views is not None:
            scfg.n_train_views = train_views
        if test_normal is not None:
            scfg.n_test_normal = test_normal
        if test_anomalous is not None:
            scfg.n_test_anomalous = test_anomalous
        if sparsity is not None:
            scfg.sparsity = sparsity
        if view_mode is not None:
            scfg.view_mode = view_mode
        scfg.__post_init__()
        target = base / f"scene_{i:03d}" if scenes > 1 else base
        t0 = time.perf_counter()
        write_dataset(generate_scene(scfg), target)
        _info(f"synth: wrote {target} in {time.perf_counter() - t0:.1f}s")


def _load_dataset(path: str) -> Dataset:
    return load_dataset(path)


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output cloud PLY.")
@click.option("--fit-iters", type=int, default=None, help="Override iteration count.")
@click.option("--paper-scale", is_flag=True, help=f"Use {PAPER_FIT_ITERATIONS} iterations.")
@click.option("--max-splats", type=int, default=None)
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Training log JSON (default: alongside the cloud).")
@click.pass_obj
@handle_errors
def fit(cfg: PipelineConfig, dataset_path, out, fit_iters, paper_scale, max_splats, log_path):
    """Fit an anomaly-free cloud to the training views."""
    ds = _load_dataset(dataset_path)
    fcfg = dataclasses.replace(cfg.fit)
    fcfg.seed = cfg.seed
    if paper_scale:
        fcfg.iterations = PAPER_FIT_ITERATIONS
    if fit_iters is not None:
        fcfg.iterations = fit_iters
    if max_splats is not None:
        fcfg.max_splats = max_splats
    rcfg = dataclasses.replace(cfg.render, background=ds.background)
    t0 = time.perf_counter()
    cloud, log = fit_cloud(ds.train, fcfg, rcfg, cfg.loss, scene_radius=ds.scene_radius)
    seconds = time.perf_counter() - t0

    out = Path(out)
    save_ply(cloud, out)
    log_file = Path(log_path) if log_path else out.with_suffix(".log.json")
    with open(log_file, "w") as f:
        json.dump({"seconds": seconds, "entries": log}, f, indent=1)
    with open(log_file.with_suffix(".csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["iteration", "loss", "psnr", "splats"])
        writer.writeheader()
        for e in log:
            writer.writerow({k: e.get(k) for k in writer.fieldnames})
    from .figures import save_training_curve

    save_training_curve(log, out.with_suffix(".curve.png"))
    final = log[-1]
    _info(
        f"fit: {len(cloud)} splats, final train PSNR {final['psnr']:.2f} dB "
        f"in {seconds:.1f}s -> {out}"
    )


@main.command()
@click.option("--cloud", "cloud_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--split", type=click.Choice(["train", "test"]), default="test")
@click.option("--frame", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_obj
@handle_errors
def render_cmd(cfg: PipelineConfig, cloud_path, dataset_path, split, frame, out):
    """Render the cloud from a dataset camera."""
    ds = _load_dataset(dataset_path)
    cloud = load_ply(cloud_path)
    cam = ds.train[frame][1] if split == "train" else ds.test[frame].camera
    rcfg = dataclasses.replace(cfg.render, background=ds.background)
    save_png(render(cloud, cam, rcfg), out)
    _info(f"render: frame {split}/{frame} -> {out}")


main.add_command(render_cmd, name="render")


@main.command()
@click.option("--cloud", "cloud_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--query", type=int, required=True, help="Test frame index.")
@click.option("--k", type=int, default=175, show_default=True)
@click.option("--lambda", "lam", type=float, default=0.2, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Pose record JSON.")
@click.pass_obj
@handle_errors
def refine(cfg: PipelineConfig, cloud_path, dataset_path, query, k, lam, lr, out):
    """Estimate one query pose by differentiable refinement."""
    ds = _load_dataset(dataset_path)
    cloud = load_ply(cloud_path)
    item = ds.test[query]
    rcfg = dataclasses.replace(cfg.render, background=ds.background)
    lcfg = dataclasses.replace(cfg.loss, lam=lam)
    pcfg = dataclasses.replace(cfg.pose, lr=lr)
    ci = coarse_pose_index(item.image, ds.train)
    est = refine_pose(item.image, ds.train[ci][1], cloud, k=k,
                      loss_cfg=lcfg, pose_cfg=pcfg, render_cfg=rcfg)
    rot, tr = pose_errors_vs_camera(est.effective_pose, item.camera)
    record = {
        "query": query,
        "coarse_view_index": ci,
        "k": k,
        "steps": est.steps,
        "degraded": est.degraded,
        "loss_trace": est.loss_trace,
        "screw": {
            "omega": est.transform.omega.tolist(),
            "v": est.transform.v.tolist(),
            "theta": est.transform.theta,
        },
        "effective_pose": est.effective_pose.tolist(),
        "rotation_error": rot,
        "translation_error": tr,
    }
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(record, f, indent=1)
    _info(f"refine: query {query} rot err {rot:.5f} rad, transl err {tr:.5f} -> {out}")


@main.command()
@click.option("--cloud", "cloud_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--k", type=int, default=175, show_default=True)
@click.pass_obj
@handle_errors
def detect(cfg: PipelineConfig, cloud_path, dataset_path, out_dir, k):
    """Run pose alignment + anomaly scoring over every test view."""
    ds = _load_dataset(dataset_path)
    cloud = load_ply(cloud_path)
    rcfg = dataclasses.replace(cfg.render, background=ds.background)
    results = detect_dataset(
        cloud, ds, k=k, render_cfg=rcfg, loss_cfg=cfg.loss,
        pose_cfg=cfg.pose, anomaly_cfg=cfg.anomaly, threads=cfg.threads,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for r in results:
        stem = f"q_{r.index:03d}"
        save_score_map_png16(r.score_map, out / f"{stem}_score.png")
        save_smap(r.score_map, out / f"{stem}_score.smap")
        save_png(r.aligned, out / f"{stem}_aligned.png")
        records.append(
            {
                "index": r.index,
                "label": r.label,
                "image_score": r.image_score,
                "coarse_index": r.coarse_index,
                "k": k,
                "loss_first": r.estimate.loss_trace[0] if r.estimate.loss_trace else None,
                "loss_final": r.estimate.loss_trace[-1] if r.estimate.loss_trace else None,
                "degraded": r.estimate.degraded,
                "rotation_error": r.rotation_err,
                "translation_error": r.translation_err,
                "seconds": r.seconds,
                "anomaly": r.anomaly,
            }
        )
    with open(out / "results.json", "w") as f:
        json.dump({"k": k, "records": records}, f, indent=1)
    _info(f"detect: {len(records)} queries -> {out}")


def _category_dirs(results_dir: Path, dataset_dir: Path) -> dict[str, tuple[Path, Path]]:
    scenes = sorted(p.name for p in dataset_dir.glob("scene_*/") if p.is_dir())
    if scenes:
        pairs = {}
        for name in scenes:
            rdir = results_dir / name
            if rdir.is_dir():
                pairs[name] = (rdir, dataset_dir / name)
        if not pairs:
            raise ConfigError("no matching scene_* result directories found")
        return pairs
    return {dataset_dir.name or "dataset": (results_dir, dataset_dir)}


@main.command(name="eval")
@click.option("--results", "results_dir", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Report directory (default: <results>/eval).")
@handle_errors
def eval_cmd(results_dir, dataset_path, out_dir):
    """Aggregate detect outputs into an evaluation report with figures."""
    from .io import load_smap
    from .metrics import evaluate_categories

    results_dir = Path(results_dir)
    dataset_dir = Path(dataset_path)
    out = Path(out_dir) if out_dir else results_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)

    per_category = {}
    for name, (rdir, ddir) in _category_dirs(results_dir, dataset_dir).items():
        ds = load_dataset(ddir)
        with open(rdir / "results.json") as f:
            saved = json.load(f)
        recs = saved["records"]
        per_category[name] = {
            "image_scores": [r["image_score"] for r in recs],
            "image_labels": [r["label"] for r in recs],
            "score_maps": [load_smap(rdir / f"q_{r['index']:03d}_score.smap") for r in recs],
            "gt_masks": [ds.test[r["index"]].mask for r in recs],
            "rotation_errors": [r["rotation_error"] for r in recs],
            "translation_errors": [r["translation_error"] for r in recs],
        }
    report = evaluate_categories(per_category)

    with open(out / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    with open(out / "report.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["category", "image_auroc", "pixel_auroc", "aupro",
             "rotation_error_mean", "translation_error_mean", "n_images"]
        )
        for c in report.categories:
            writer.writerow(
                [c.name, c.image_auroc, c.pixel_auroc, c.aupro,
                 c.rotation_error_mean, c.translation_error_mean, c.n_images]
            )
        writer.writerow(
            ["mean", report.image_auroc, report.pixel_auroc, report.aupro,
             report.rotation_error_mean, report.translation_error_mean, ""]
        )
    with open(out / "report.txt", "w") as f:
        f.write(report.table() + "\n")
    from .figures import save_eval_figures

    save_eval_figures(per_category, out)
    _info(report.table())
    _info(f"eval: report -> {out}")


@main.command(name="ablate-k")
@click.option("--cloud", "cloud_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--k-list", default="25,50,100,175", show_default=True)
@click.option("--max-queries", type=int, default=None,
              help="Evaluate only the first N test views.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_obj
@handle_errors
def ablate_k(cfg: PipelineConfig, cloud_path, dataset_path, k_list, max_queries, out_dir):
    """Sweep the pose-refinement step count and tabulate metrics vs cost."""
    ds = _load_dataset(dataset_path)
    cloud = load_ply(cloud_path)
    ks = [int(s) for s in k_list.split(",") if s.strip()]
    queries = list(range(len(ds.test)))[:max_queries] if max_queries else None
    rcfg = dataclasses.replace(cfg.render, background=ds.background)
    rows = run_ablate_k(
        cloud, ds, ks, queries=queries, threads=cfg.threads,
        render_cfg=rcfg, loss_cfg=cfg.loss, pose_cfg=cfg.pose, anomaly_cfg=cfg.anomaly,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablate_k.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["k", "image_auroc", "pixel_auroc", "aupro",
             "rotation_error_mean", "translation_error_mean", "seconds_per_query"]
        )
        for r in rows:
            writer.writerow(
                [r.k, r.image_auroc, r.pixel_auroc, r.aupro,
                 r.rotation_error_mean, r.translation_error_mean, r.seconds_per_query]
            )
    from .figures import save_ablation_figure

    save_ablation_figure(rows, out / "ablate_k.png")
    _info(f"ablate-k: {len(rows)} rows -> {out}")


if __name__ == "__main__":
    main()
