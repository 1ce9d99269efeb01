"""Training and evaluation orchestration.

Every run is a pure function of (config, dataset, seed): the stochastic
ingredients of step t come from SeedSequence children of the optimizer
seed, data loading is serial, and deterministic mode pins torch to one
thread so checkpoints and reports are byte-reproducible.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .config import ExperimentConfig, config_to_dict
from .data import Dataset, DatasetSlice, NoiseSpec, build_dataset, load_dataset
from .encoding import adjoint
from .losses import draw_step_samples, evaluate_loss
from .metrics import psnr, ssim
from .network import (init_params, load_checkpoint, save_checkpoint,
                      unrolled_forward)
from .report import (ensure_dir, recon_panel, save_error_png,
                     save_magnitude_png, training_curves, write_metrics_csv)
from .sampling import equidistant_mask, ssdu_split


_SPLIT_TAG = 1
_STEP_TAG = 2


def _child_seed(*key) -> int:
    return int(np.random.SeedSequence(tuple(key)).generate_state(1)[0])


def _cast_slice(sl: DatasetSlice, cdtype: torch.dtype) -> DatasetSlice:
    from .data import CoilSensitivities
    return DatasetSlice(
        ground_truth=sl.ground_truth.to(cdtype),
        coils=CoilSensitivities(maps=sl.coils.maps.to(cdtype),
                                support=sl.coils.support),
        full_kspace=sl.full_kspace.to(cdtype))


def _load_or_generate(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    if d.path:
        return load_dataset(d.path)
    return build_dataset(d.n_slices, d.rows, d.cols, d.n_coils,
                         NoiseSpec(sigma=d.sigma, seed=d.noise_seed), d.seed)


def _masked_input(sl: DatasetSlice, omega) -> torch.Tensor:
    return sl.full_kspace * omega.tensor().to(sl.full_kspace.real.dtype)


def train(cfg: ExperimentConfig, dataset: Dataset | None = None,
          log_print: bool = False) -> tuple[str, str]:
    """Run the configured method; returns (checkpoint path, log path)."""
    if cfg.deterministic:
        torch.set_num_threads(1)
    out_dir = ensure_dir(cfg.output.dir)
    dataset = dataset or _load_or_generate(cfg)
    cdtype = cfg.model.complex_dtype
    rows, cols = dataset.grid
    omega = equidistant_mask(rows, cols, cfg.mask.accel, cfg.mask.n_acs)

    n_train = cfg.dataset.train_slices or (len(dataset.slices)
                                           - cfg.dataset.val_slices)
    train_slices = [_cast_slice(s, cdtype)
                    for s in dataset.slices[:n_train]]
    val_slices = [_cast_slice(s, cdtype)
                  for s in dataset.slices[n_train:n_train
                                          + cfg.dataset.val_slices]]
    if not train_slices:
        raise ValueError("no training slices")

    # fixed per-slice splits unless the config asks for per-step resampling
    fixed_splits = None
    if cfg.loss.method in ("mmssdu", "ccssdu", "spicssdu", "picl2") \
            and not cfg.loss.resample_splits:
        fixed_splits = [
            ssdu_split(omega, cfg.loss.rho, cfg.loss.n_masks,
                       _child_seed(cfg.optim.seed, _SPLIT_TAG, i))
            for i in range(len(train_slices))]

    params = init_params(cfg.model, cfg.optim.seed).requires_grad_(True)
    if cfg.optim.freeze_mu:
        params.mu_raw.requires_grad_(False)
    opt = torch.optim.Adam([t for t in params.tensors() if t.requires_grad],
                           lr=cfg.optim.lr, betas=(0.9, 0.999), eps=1e-8)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    log_path = os.path.join(out_dir, "train_log.jsonl")
    lineage = {"optim_seed": cfg.optim.seed,
               "dataset_seed": cfg.dataset.seed,
               "method": cfg.loss.method}
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)

    def validate() -> float | None:
        if not val_slices:
            return None
        with torch.no_grad():
            vals = [psnr(s.ground_truth,
                         unrolled_forward(_masked_input(s, omega), s.coils,
                                          omega, params, cfg.model))
                    for s in val_slices]
        return float(np.mean(vals))

    log_fh = open(log_path, "w")
    last_good = None
    try:
        for step in range(cfg.optim.steps):
            sl_idx = step % len(train_slices)
            sl = train_slices[sl_idx]
            samples = draw_step_samples(
                omega, cfg.loss, _child_seed(cfg.optim.seed, _STEP_TAG, step),
                split=None if fixed_splits is None else fixed_splits[sl_idx],
                dtype=cdtype)
            opt.zero_grad(set_to_none=True)
            try:
                value, diag = evaluate_loss(sl, omega, samples, params,
                                            cfg.model, cfg.loss)
            except FloatingPointError as exc:
                _abort(ckpt_path, params, step, lineage, last_good)
                raise RuntimeError(
                    f"aborted at step {step}: {exc}; last good checkpoint "
                    f"written to {ckpt_path}") from exc
            if not bool(torch.isfinite(value)):
                _abort(ckpt_path, params, step, lineage, last_good)
                raise RuntimeError(
                    f"aborted at step {step}: non-finite loss; last good "
                    f"checkpoint written to {ckpt_path}")
            value.backward()
            if cfg.optim.lr_decay != 1.0:
                for group in opt.param_groups:
                    group["lr"] = cfg.optim.lr * cfg.optim.lr_decay ** step
            opt.step()
            entry = {"step": step, "slice": sl_idx,
                     "loss": float(value.detach()),
                     "lr": opt.param_groups[0]["lr"], **diag}
            if cfg.optim.val_interval and (step + 1) % cfg.optim.val_interval == 0:
                v = validate()
                if v is not None:
                    entry["val_psnr_db"] = v
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            if log_print:
                print(f"step {step:5d}  loss {entry['loss']:.6f}"
                      + (f"  val {entry['val_psnr_db']:.2f} dB"
                         if "val_psnr_db" in entry else ""))
            last_good = params.detach_clone()
            if cfg.optim.checkpoint_interval and \
                    (step + 1) % cfg.optim.checkpoint_interval == 0:
                save_checkpoint(params, ckpt_path, step=step + 1,
                                seed_lineage=lineage)
    finally:
        log_fh.close()
    save_checkpoint(params, ckpt_path, step=cfg.optim.steps,
                    seed_lineage=lineage)
    with open(log_path) as fh:
        entries = [json.loads(line) for line in fh]
    training_curves(os.path.join(out_dir, "training.png"), entries)
    return ckpt_path, log_path


def _abort(ckpt_path, params, step, lineage, last_good):
    keep = last_good if last_good is not None else params.detach_clone()
    save_checkpoint(keep, ckpt_path, step=step, seed_lineage=lineage)


def evaluate(checkpoint_path: str, dataset: Dataset | str, accel: int,
             n_acs: int, out_dir: str, slice_indices: list[int] | None = None,
             reconstructor=None, emit_images: bool = True,
             deterministic: bool = False) -> dict:
    """Reconstruct the selected slices and report PSNR/SSIM per slice plus
    mean and std; writes the metrics CSV and windowed PNG images."""
    if deterministic:
        torch.set_num_threads(1)
    ensure_dir(out_dir)
    if isinstance(dataset, str):
        dataset = load_dataset(dataset)
    if reconstructor is None:
        params, header = load_checkpoint(checkpoint_path)
        cfg = params.config
        cdtype = cfg.complex_dtype

        def reconstructor(sl):
            s = _cast_slice(sl, cdtype)
            return unrolled_forward(_masked_input(s, omega), s.coils, omega,
                                    params, cfg)

    rows, cols = dataset.grid
    omega = equidistant_mask(rows, cols, accel, n_acs)
    indices = slice_indices or list(range(len(dataset.slices)))
    rows_out = []
    recons = {}
    with torch.no_grad():
        for idx in indices:
            sl = dataset.slices[idx]
            recon = reconstructor(sl)
            recons[idx] = recon
            rows_out.append((idx, psnr(sl.ground_truth, recon),
                             ssim(sl.ground_truth, recon)))
    psnrs = np.array([r[1] for r in rows_out])
    ssims = np.array([r[2] for r in rows_out])
    csv_path = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(csv_path, rows_out, float(psnrs.mean()),
                      float(ssims.mean()))
    summary = {
        "csv": csv_path,
        "psnr_mean": float(psnrs.mean()), "psnr_std": float(psnrs.std()),
        "ssim_mean": float(ssims.mean()), "ssim_std": float(ssims.std()),
        "n_slices": len(indices),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if emit_images:
        for idx in indices:
            sl = dataset.slices[idx]
            save_magnitude_png(
                os.path.join(out_dir, f"slice{idx:03d}_recon.png"),
                recons[idx])
            save_error_png(
                os.path.join(out_dir, f"slice{idx:03d}_error.png"),
                sl.ground_truth, recons[idx])
        first = indices[0]
        recon_panel(os.path.join(out_dir, "panel.png"),
                    {"reference": dataset.slices[first].ground_truth,
                     "reconstruction": recons[first]})
    return summary


def zero_filled_psnr(dataset: Dataset, accel: int, n_acs: int,
                     indices: list[int]) -> float:
    """Mean PSNR of the adjoint (zero-filled) reconstruction baseline."""
    rows, cols = dataset.grid
    omega = equidistant_mask(rows, cols, accel, n_acs)
    vals = []
    for idx in indices:
        sl = dataset.slices[idx]
        zf = adjoint(_masked_input(sl, omega), sl.coils.maps, omega)
        vals.append(psnr(sl.ground_truth, zf))
    return float(np.mean(vals))


def run_ablation(cfg: ExperimentConfig, dataset: Dataset | None = None,
                 test_indices: list[int] | None = None) -> dict:
    """Train the sparse-domain and image-domain perturbation-consistency
    variants from one shared init and compare them side by side."""
    from dataclasses import replace

    from .report import ablation_figure

    out_dir = ensure_dir(cfg.output.dir)
    dataset = dataset or _load_or_generate(cfg)
    n_train = cfg.dataset.train_slices or (len(dataset.slices)
                                           - cfg.dataset.val_slices)
    if test_indices is None:
        test_indices = list(range(n_train, len(dataset.slices))) or [0]

    results = {}
    for method in ("spicssdu", "picl2"):
        sub = replace(cfg,
                      loss=replace(cfg.loss, method=method),
                      output=replace(cfg.output,
                                     dir=os.path.join(out_dir, method)))
        ckpt, _log = train(sub, dataset=dataset)
        summary = evaluate(ckpt, dataset, cfg.mask.accel, cfg.mask.n_acs,
                           os.path.join(out_dir, method, "eval"),
                           slice_indices=test_indices, emit_images=False,
                           deterministic=cfg.deterministic)
        results[method] = {"checkpoint": ckpt,
                           "beta": sub.loss.resolved_beta,
                           **summary}

    delta = results["spicssdu"]["psnr_mean"] - results["picl2"]["psnr_mean"]
    report = {
        "methods": {
            "spicssdu": {"label": "weighted-l1 perturbation consistency",
                         **results["spicssdu"]},
            "picl2": {"label": "l2 perturbation consistency",
                      **results["picl2"]},
        },
        "psnr_mean_delta_spic_minus_picl2": delta,
    }
    report_path = os.path.join(out_dir, "ablation.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)

    # combined side-by-side CSV
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write("method,beta,psnr_mean,psnr_std,ssim_mean,ssim_std\n")
        for method in ("spicssdu", "picl2"):
            r = results[method]
            fh.write(f"{method},{r['beta']:.6g},{r['psnr_mean']:.6f},"
                     f"{r['psnr_std']:.6f},{r['ssim_mean']:.6f},"
                     f"{r['ssim_std']:.6f}\n")
        fh.write(f"delta_spic_minus_picl2,,{delta:.6f},,,\n")

    # image panel on the first test slice
    idx = test_indices[0]
    sl = dataset.slices[idx]
    rows, cols = dataset.grid
    omega = equidistant_mask(rows, cols, cfg.mask.accel, cfg.mask.n_acs)
    panels = {}
    for method in ("spicssdu", "picl2"):
        params, _ = load_checkpoint(results[method]["checkpoint"])
        s = _cast_slice(sl, params.config.complex_dtype)
        with torch.no_grad():
            panels[method] = unrolled_forward(
                _masked_input(s, omega), s.coils, omega, params,
                params.config)
    ablation_figure(os.path.join(out_dir, "ablation_panel.png"),
                    sl.ground_truth, panels["spicssdu"], panels["picl2"],
                    "weighted-l1", "l2")
    report["csv"] = csv_path
    report["figure"] = os.path.join(out_dir, "ablation_panel.png")
    return report
