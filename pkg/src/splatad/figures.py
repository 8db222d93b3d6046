"""Report figures written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    order = np.argsort(-scores, kind="mergesort")
    tp = np.cumsum(labels[order])
    fp = np.cumsum(~labels[order])
    tpr = np.concatenate([[0.0], tp / max(tp[-1], 1)])
    fpr = np.concatenate([[0.0], fp / max(fp[-1], 1)])
    return fpr, tpr


def save_training_curve(log: list[dict], path: str | Path) -> None:
    entries = [e for e in log if e.get("loss") is not None]
    its = [e["iteration"] for e in entries]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(its, [e["loss"] for e in entries])
    axes[0].set_xlabel("iteration"); axes[0].set_ylabel("loss"); axes[0].set_yscale("log")
    axes[1].plot(its, [e["psnr"] for e in entries])
    axes[1].set_xlabel("iteration"); axes[1].set_ylabel("PSNR (dB)")
    axes[2].plot(its, [e["splats"] for e in entries])
    axes[2].set_xlabel("iteration"); axes[2].set_ylabel("splat count")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_figures(per_category: dict[str, dict], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    for name, d in per_category.items():
        fpr, tpr = roc_points(d["image_scores"], d["image_labels"])
        ax.plot(fpr, tpr, label=name, lw=1.2)
    ax.plot([0, 1], [0, 1], "k--", lw=0.7)
    ax.set_xlabel("false positive rate"); ax.set_ylabel("true positive rate")
    ax.set_title("image-level ROC")
    if len(per_category) <= 10:
        ax.legend(fontsize=7)
    fig.tight_layout()
    p = out / "roc_image.png"
    fig.savefig(p, dpi=120); plt.close(fig); written.append(p)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    normal = np.concatenate(
        [np.asarray(d["image_scores"])[np.asarray(d["image_labels"]) == 0]
         for d in per_category.values()]
    )
    anom = np.concatenate(
        [np.asarray(d["image_scores"])[np.asarray(d["image_labels"]) == 1]
         for d in per_category.values()]
    )
    bins = np.linspace(
        min(normal.min(), anom.min()), max(normal.max(), anom.max()), 30
    )
    ax.hist(normal, bins=bins, alpha=0.6, label="normal")
    ax.hist(anom, bins=bins, alpha=0.6, label="anomalous")
    ax.set_xlabel("image score"); ax.set_ylabel("count"); ax.legend()
    fig.tight_layout()
    p = out / "score_hist.png"
    fig.savefig(p, dpi=120); plt.close(fig); written.append(p)
    return written


def save_ablation_figure(rows: list, path: str | Path) -> None:
    ks = [r.k for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(ks, [r.image_auroc for r in rows], "o-", label="image AUROC")
    axes[0].plot(ks, [r.pixel_auroc for r in rows], "s-", label="pixel AUROC")
    axes[0].plot(ks, [r.aupro for r in rows], "^-", label="AUPRO")
    axes[0].set_xlabel("pose steps k"); axes[0].legend(fontsize=8)
    axes[1].plot(ks, [r.rotation_error_mean for r in rows], "o-")
    axes[1].set_xlabel("pose steps k"); axes[1].set_ylabel("mean rotation error (rad)")
    axes[1].set_yscale("log")
    axes[2].plot(ks, [r.seconds_per_query for r in rows], "o-")
    axes[2].set_xlabel("pose steps k"); axes[2].set_ylabel("seconds / query")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
