"""Report emission: metrics CSV, windowed grayscale PNGs with sidecar
window metadata, and matplotlib figure panels."""

from __future__ import annotations

import json
import os

import matplotlib
import numpy as np
import torch

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from PIL import Image  # noqa: E402

CSV_HEADER = "slice,psnr_db,ssim"


def _mag(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().numpy()
    return np.abs(np.asarray(img)).astype(np.float64)


def write_metrics_csv(path: str, rows: list[tuple], mean_psnr: float,
                      mean_ssim: float) -> None:
    """Per-slice rows plus one summary row; fixed formatting so identical
    inputs produce identical bytes."""
    lines = [CSV_HEADER]
    for idx, p, s in rows:
        lines.append(f"{idx},{p:.6f},{s:.6f}")
    lines.append(f"mean,{mean_psnr:.6f},{mean_ssim:.6f}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def save_magnitude_png(path: str, img, window: tuple[float, float] | None = None
                       ) -> tuple[float, float]:
    """8-bit grayscale magnitude image, min-max windowed; the window is
    recorded in a sidecar JSON next to the image."""
    m = _mag(img)
    lo, hi = window if window is not None else (float(m.min()), float(m.max()))
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((m - lo) / span, 0.0, 1.0)
    arr = np.round(scaled * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
    with open(path + ".json", "w") as fh:
        json.dump({"window_min": lo, "window_max": hi}, fh)
    return lo, hi


def save_error_png(path: str, ref, est) -> None:
    err = np.abs(_mag(ref) - _mag(est))
    save_magnitude_png(path, err)


def recon_panel(path: str, images: dict[str, object],
                titles_note: str = "") -> None:
    """Side-by-side magnitude panel for a set of reconstructions."""
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.6))
    if n == 1:
        axes = [axes]
    for ax, (name, img) in zip(axes, images.items()):
        m = _mag(img)
        ax.imshow(m, cmap="gray", interpolation="nearest")
        ax.set_title(name, fontsize=10)
        ax.axis("off")
    if titles_note:
        fig.suptitle(titles_note, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def training_curves(path: str, log_entries: list[dict]) -> None:
    """Loss (and validation PSNR when present) against training step."""
    steps = [e["step"] for e in log_entries if "loss" in e]
    losses = [e["loss"] for e in log_entries if "loss" in e]
    val = [(e["step"], e["val_psnr_db"]) for e in log_entries
           if "val_psnr_db" in e]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.plot(steps, losses, lw=0.9, label="training loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if val:
        ax2 = ax.twinx()
        ax2.plot(*zip(*val), "o-", color="tab:orange", ms=3,
                 label="validation PSNR")
        ax2.set_ylabel("PSNR (dB)")
    ax.legend(loc="upper right", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_figure(path: str, ref, recon_a, recon_b, label_a: str,
                    label_b: str) -> None:
    """Reference, the two reconstructions and their error maps."""
    imgs = [("reference", _mag(ref)), (label_a, _mag(recon_a)),
            (label_b, _mag(recon_b)),
            (f"|err| {label_a}", np.abs(_mag(ref) - _mag(recon_a))),
            (f"|err| {label_b}", np.abs(_mag(ref) - _mag(recon_b)))]
    fig, axes = plt.subplots(1, 5, figsize=(16, 3.6))
    for ax, (name, m) in zip(axes, imgs):
        ax.imshow(m, cmap="gray", interpolation="nearest")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
