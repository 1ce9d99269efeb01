"""Training objectives: supervised, multi-mask self-supervision, the two
cyclic-consistency baselines, the sparse parallel-imaging-consistency
objective and its image-domain l2 ablation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import DatasetSlice
from .encoding import forward
from .network import RegularizerParams, UnrolledConfig, unrolled_forward
from .perturb import (Perturbation, estimate_perturbation,
                      generate_perturbation, perturb_measurements,
                      verify_no_overlap)
from .sampling import SamplingMask, SSDUSplit, shifted_patterns, ssdu_split
from .wavelets import pic_l2, weighted_l1

METHODS = ("supervised", "mmssdu", "ulim", "ccssdu", "spicssdu", "picl2")

# trade-off weights used when the config leaves beta unset
BETA_DEFAULTS = {"spicssdu": 5e-3, "picl2": 5e-3, "ulim": 1.0, "ccssdu": 1.0}


@dataclass(frozen=True)
class LossConfig:
    method: str = "spicssdu"
    beta: float | None = None
    rho: float = 0.4
    n_masks: int = 3            # K SSDU splits per step
    n_perturbations: int = 3
    n_deltas: int = 1           # shifted patterns per step (ulim/ccssdu)
    eps: float = 1e-4
    wavelet_kind: str = "dtcwt"
    wavelet_levels: int = 3
    detach_inner: bool = False
    resample_splits: bool = False
    perturb_amplitude: float = 0.5
    perturb_features: int = 3

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.n_masks < 1:
            raise ValueError("need at least one SSDU mask")
        if self.method in ("spicssdu", "picl2") and self.n_perturbations < 1:
            raise ValueError("perturbation-consistency methods need "
                             "n_perturbations >= 1")

    @property
    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        return BETA_DEFAULTS.get(self.method, 0.0)


def norm_l1l2(ref: torch.Tensor, est: torch.Tensor) -> torch.Tensor:
    """Normalized l1-l2 distance: ||r-e||2/||r||2 + ||r-e||1/||r||1."""
    if ref.shape != est.shape:
        raise ValueError("shape mismatch")
    ref_l2 = torch.linalg.vector_norm(ref)
    ref_l1 = ref.abs().sum()
    if ref_l2.item() == 0:
        raise ValueError("reference is zero")
    diff = ref - est
    return (torch.linalg.vector_norm(diff) / ref_l2
            + diff.abs().sum() / ref_l1)


def _recon(sl: DatasetSlice, kspace, mask, params, cfg):
    return unrolled_forward(kspace, sl.coils, mask, params, cfg)


def _masked(kspace: torch.Tensor, mask: SamplingMask) -> torch.Tensor:
    return kspace * mask.tensor().to(kspace.real.dtype)


def loss_mmssdu(sl: DatasetSlice, kspace: torch.Tensor, split: SSDUSplit,
                params: RegularizerParams, cfg: UnrolledConfig) -> torch.Tensor:
    """Mean over splits of the held-out k-space consistency: the network
    sees theta_k only, the loss is evaluated on lambda_k only."""
    total = None
    for theta, lam in split.pairs:
        if lam.n_sampled == 0:
            raise ValueError("empty lambda mask")
        recon = _recon(sl, _masked(kspace, theta), theta, params, cfg)
        pred = forward(recon, sl.coils.maps, lam)
        term = norm_l1l2(_masked(kspace, lam), pred)
        total = term if total is None else total + term
    return total / split.n_masks


def loss_ulim(sl: DatasetSlice, kspace: torch.Tensor, omega: SamplingMask,
              deltas: list[SamplingMask], params: RegularizerParams,
              cfg: UnrolledConfig, beta: float,
              detach_inner: bool = False) -> torch.Tensor:
    """Full-measurement consistency plus image-domain cyclic consistency
    through shifted patterns."""
    if not deltas:
        raise ValueError("need at least one shifted pattern")
    x_hat = _recon(sl, _masked(kspace, omega), omega, params, cfg)
    total = norm_l1l2(_masked(kspace, omega),
                      forward(x_hat, sl.coils.maps, omega))
    if beta == 0:
        return total
    inner = x_hat.detach() if detach_inner else x_hat
    cyc = None
    for delta in deltas:
        re_enc = forward(inner, sl.coils.maps, delta)
        x_cyc = _recon(sl, re_enc, delta, params, cfg)
        term = norm_l1l2(inner, x_cyc)
        cyc = term if cyc is None else cyc + term
    return total + beta * cyc / len(deltas)


def loss_ccssdu(sl: DatasetSlice, kspace: torch.Tensor, omega: SamplingMask,
                split: SSDUSplit, deltas: list[SamplingMask],
                params: RegularizerParams, cfg: UnrolledConfig, beta: float,
                detach_inner: bool = False) -> torch.Tensor:
    """Multi-mask self-supervision plus acquired-measurement consistency of
    the re-reconstruction cycle omega -> delta -> omega."""
    total = loss_mmssdu(sl, kspace, split, params, cfg)
    if beta == 0:
        return total
    if not deltas:
        raise ValueError("need at least one shifted pattern")
    x_hat = _recon(sl, _masked(kspace, omega), omega, params, cfg)
    inner = x_hat.detach() if detach_inner else x_hat
    cyc = None
    for delta in deltas:
        re_enc = forward(inner, sl.coils.maps, delta)
        x_cyc = _recon(sl, re_enc, delta, params, cfg)
        term = norm_l1l2(_masked(kspace, omega),
                         forward(x_cyc, sl.coils.maps, omega))
        cyc = term if cyc is None else cyc + term
    return total + beta * cyc / len(deltas)


def loss_spic(sl: DatasetSlice, kspace: torch.Tensor, omega: SamplingMask,
              split: SSDUSplit, perturbations: list[Perturbation],
              params: RegularizerParams, cfg: UnrolledConfig,
              loss_cfg: LossConfig):
    """Multi-mask self-supervision plus the sparse-domain weighted-l1
    consistency of recovered perturbations.  Both perturbation passes use
    the full acquired mask.  Returns (loss, diagnostics)."""
    beta = loss_cfg.resolved_beta
    mm = loss_mmssdu(sl, kspace, split, params, cfg)
    diag = {"mm_term": float(mm.detach())}
    if beta == 0:
        diag["spic_term"] = 0.0
        return mm, diag
    for p in perturbations:
        if not verify_no_overlap(p, omega.accel, omega.n_pe):
            raise ValueError("perturbation violates the aliasing-overlap "
                             "constraint for this acceleration")
    y_omega = _masked(kspace, omega)
    clean = _recon(sl, y_omega, omega, params, cfg)
    if loss_cfg.detach_inner:
        clean = clean.detach()
    per_vals = []
    acc = None
    for p in perturbations:
        y_pert = perturb_measurements(y_omega, p, sl.coils, omega)
        p_est = estimate_perturbation(
            _recon(sl, y_pert, omega, params, cfg), clean)
        term = weighted_l1(p_est, p.image, levels=loss_cfg.wavelet_levels,
                           kind=loss_cfg.wavelet_kind, eps=loss_cfg.eps)
        per_vals.append(float(term.detach()))
        acc = term if acc is None else acc + term
    spic = acc / len(perturbations)
    diag["spic_term"] = float(spic.detach())
    diag["per_perturbation"] = per_vals
    return mm + beta * spic, diag


def loss_pic_l2_total(sl: DatasetSlice, kspace: torch.Tensor,
                      omega: SamplingMask, split: SSDUSplit,
                      perturbations: list[Perturbation],
                      params: RegularizerParams, cfg: UnrolledConfig,
                      loss_cfg: LossConfig):
    """Ablation: image-domain normalized l2 in place of the sparse-domain
    weighted-l1 term."""
    beta = loss_cfg.resolved_beta
    mm = loss_mmssdu(sl, kspace, split, params, cfg)
    diag = {"mm_term": float(mm.detach())}
    if beta == 0:
        diag["pic_term"] = 0.0
        return mm, diag
    for p in perturbations:
        if not verify_no_overlap(p, omega.accel, omega.n_pe):
            raise ValueError("perturbation violates the aliasing-overlap "
                             "constraint for this acceleration")
    y_omega = _masked(kspace, omega)
    clean = _recon(sl, y_omega, omega, params, cfg)
    if loss_cfg.detach_inner:
        clean = clean.detach()
    acc = None
    for p in perturbations:
        y_pert = perturb_measurements(y_omega, p, sl.coils, omega)
        p_est = estimate_perturbation(
            _recon(sl, y_pert, omega, params, cfg), clean)
        term = pic_l2(p_est, p.image)
        acc = term if acc is None else acc + term
    pic = acc / len(perturbations)
    diag["pic_term"] = float(pic.detach())
    return mm + beta * pic, diag


def loss_supervised(sl: DatasetSlice, kspace: torch.Tensor,
                    omega: SamplingMask, params: RegularizerParams,
                    cfg: UnrolledConfig) -> torch.Tensor:
    """Image-domain normalized l1-l2 against the ground truth."""
    if sl.ground_truth is None:
        raise ValueError("supervised loss needs ground truth")
    recon = _recon(sl, _masked(kspace, omega), omega, params, cfg)
    return norm_l1l2(sl.ground_truth, recon)


@dataclass
class StepSamples:
    """Per-step stochastic ingredients, reproducible from one seed."""

    split: SSDUSplit | None = None
    deltas: list[SamplingMask] = field(default_factory=list)
    perturbations: list[Perturbation] = field(default_factory=list)


def draw_step_samples(omega: SamplingMask, loss_cfg: LossConfig, seed: int,
                      split: SSDUSplit | None = None,
                      dtype: torch.dtype = torch.complex128) -> StepSamples:
    """Draw the splits, shifted patterns and perturbations one training step
    needs.  A fixed ``split`` is reused unless resampling is requested."""
    ss = np.random.SeedSequence(seed)
    k_split, k_delta, k_pert = [int(s.generate_state(1)[0])
                                for s in ss.spawn(3)]
    out = StepSamples()
    method = loss_cfg.method
    if method in ("mmssdu", "ccssdu", "spicssdu", "picl2"):
        if split is not None and not loss_cfg.resample_splits:
            out.split = split
        else:
            out.split = ssdu_split(omega, loss_cfg.rho, loss_cfg.n_masks,
                                   k_split)
    if method in ("ulim", "ccssdu"):
        out.deltas = shifted_patterns(omega, loss_cfg.n_deltas, k_delta)
    if method in ("spicssdu", "picl2") and loss_cfg.resolved_beta > 0:
        pss = np.random.SeedSequence(k_pert)
        for child in pss.spawn(loss_cfg.n_perturbations):
            out.perturbations.append(generate_perturbation(
                omega.n_pe, omega.n_ro, omega.accel,
                n_features=loss_cfg.perturb_features,
                amplitude=loss_cfg.perturb_amplitude,
                seed=int(child.generate_state(1)[0]), dtype=dtype))
    return out


def evaluate_loss(sl: DatasetSlice, omega: SamplingMask,
                  samples: StepSamples, params: RegularizerParams,
                  cfg: UnrolledConfig, loss_cfg: LossConfig):
    """Dispatch one training example to the configured objective.

    Returns (scalar tensor, diagnostics dict)."""
    kspace = sl.full_kspace.to(cfg.complex_dtype)
    method = loss_cfg.method
    if method == "supervised":
        return loss_supervised(sl, kspace, omega, params, cfg), {}
    if method == "mmssdu":
        return loss_mmssdu(sl, kspace, samples.split, params, cfg), {}
    if method == "ulim":
        return loss_ulim(sl, kspace, omega, samples.deltas, params, cfg,
                         loss_cfg.resolved_beta, loss_cfg.detach_inner), {}
    if method == "ccssdu":
        return loss_ccssdu(sl, kspace, omega, samples.split, samples.deltas,
                           params, cfg, loss_cfg.resolved_beta,
                           loss_cfg.detach_inner), {}
    if method == "spicssdu":
        return loss_spic(sl, kspace, omega, samples.split,
                         samples.perturbations, params, cfg, loss_cfg)
    if method == "picl2":
        return loss_pic_l2_total(sl, kspace, omega, samples.split,
                                 samples.perturbations, params, cfg, loss_cfg)
    raise ValueError(f"unknown method {method!r}")


def loss_gradient(batch, loss_cfg: LossConfig, params: RegularizerParams,
                  cfg: UnrolledConfig, seed: int):
    """Exact reverse-mode gradient of the batch-mean loss with respect to
    every parameter tensor.

    ``batch`` is a list of (DatasetSlice, omega) pairs; the per-example
    stochastic ingredients are drawn deterministically from ``seed``.
    Returns (RegularizerParams-shaped gradients, float loss).
    """
    tensors = params.tensors()
    had_grad = [t.requires_grad for t in tensors]
    params.requires_grad_(True)
    try:
        total = None
        for i, (sl, omega) in enumerate(batch):
            samples = draw_step_samples(
                omega, loss_cfg,
                int(np.random.SeedSequence((seed, i)).generate_state(1)[0]),
                dtype=cfg.complex_dtype)
            value, _ = evaluate_loss(sl, omega, samples, params, cfg,
                                     loss_cfg)
            total = value if total is None else total + value
        total = total / len(batch)
        grads = torch.autograd.grad(total, tensors, allow_unused=True)
    finally:
        for t, flag in zip(tensors, had_grad):
            t.requires_grad_(flag)
    filled = [g if g is not None else torch.zeros_like(t)
              for g, t in zip(grads, tensors)]
    if not all(bool(torch.isfinite(g).all()) for g in filled):
        raise FloatingPointError("non-finite gradient")
    out = params.zeros_like()
    new = iter(filled)
    out.head = next(new)
    out.blocks = [(next(new), next(new)) for _ in range(len(params.blocks))]
    out.tail, out.proj, out.mu_raw = next(new), next(new), next(new)
    return out, float(total.detach())
