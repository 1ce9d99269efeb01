"""Parallel-imaging-recoverable perturbations.

A perturbation is a sparse complex image whose occupied rows fit inside a
single band strictly shorter than the aliasing replica spacing rows/R, so
the R fold-over copies produced by equidistant undersampling never overlap
and least-squares unfolding can recover it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .cg import cg_sense
from .data import CoilSensitivities
from .encoding import forward
from .sampling import SamplingMask


@dataclass(frozen=True)
class Feature:
    row: int
    col: int
    extent: int
    amplitude: complex


@dataclass(frozen=True)
class Perturbation:
    image: torch.Tensor                 # (rows, cols) complex, sparse
    support_rows: tuple[int, ...]
    features: tuple[Feature, ...]
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.image.shape)


def generate_perturbation(rows: int, cols: int, accel: int,
                          n_features: int = 3, amplitude: float = 0.5,
                          seed: int = 0,
                          dtype: torch.dtype = torch.complex128) -> Perturbation:
    """Place Gaussian-windowed complex blobs inside one random band of
    height at most floor(rows/R) - 1; peak magnitude is exactly
    ``amplitude``.  The result always passes :func:`verify_no_overlap`."""
    band_height = rows // accel - 1
    if rows // accel < 4:
        raise ValueError("grid too small for this acceleration: "
                         "need floor(rows/R) >= 4")
    if n_features < 1:
        raise ValueError("need at least one feature")
    rng = np.random.default_rng(seed)
    extent = min(5, band_height)
    if extent < 1:
        raise ValueError("cannot fit any feature in the aliasing-free band")
    half = extent // 2
    band_start = int(rng.integers(0, rows - band_height + 1))
    img = np.zeros((rows, cols), dtype=np.complex128)
    feats = []
    for _ in range(n_features):
        r = int(rng.integers(band_start + half,
                             band_start + band_height - half))
        c = int(rng.integers(half, cols - half))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = np.exp(1j * phase)
        sig = extent / 4.0
        dr = np.arange(-half, half + 1)
        blob = np.exp(-(dr[:, None] ** 2 + dr[None, :] ** 2) / (2.0 * sig ** 2))
        img[r - half:r + half + 1, c - half:c + half + 1] += amp * blob
        feats.append(Feature(row=r, col=c, extent=extent,
                             amplitude=complex(amp)))
    img *= amplitude / np.abs(img).max()
    support_rows = tuple(np.nonzero(np.abs(img).sum(axis=1) > 0)[0].tolist())
    pert = Perturbation(image=torch.from_numpy(img).to(dtype),
                        support_rows=support_rows,
                        features=tuple(feats), seed=seed)
    if not verify_no_overlap(pert, accel, rows):
        raise AssertionError("generated perturbation violates the "
                             "aliasing-overlap constraint")
    return pert


def verify_no_overlap(pert: Perturbation, accel: int, rows: int,
                      detail: bool = False):
    """Geometric check: the R copies of the occupied rows shifted by
    k*rows/R (mod rows) must be pairwise disjoint.  When R does not divide
    the row count, floor shifts are used and the result is flagged
    approximate."""
    approximate = rows % accel != 0
    occupied = set(pert.support_rows)
    seen: set[int] = set()
    ok = True
    for k in range(accel):
        shift = (k * rows) // accel
        copy = {(r + shift) % rows for r in occupied}
        if seen & copy:
            ok = False
            break
        seen |= copy
    if detail:
        return ok, {"approximate": approximate, "band_rows": len(occupied)}
    return ok


def verify_pi_recoverable(pert: Perturbation, coils: CoilSensitivities,
                          mask: SamplingMask, tol: float = 1e-3,
                          iters: int = 100) -> bool:
    """Empirical check: encode the perturbation, reconstruct it with
    CG-SENSE and compare.  Complements the geometric test when ACS lines
    distort the aliasing point spread."""
    encoded = forward(pert.image, coils.maps, mask)
    recon = cg_sense(encoded, coils.maps, mask, iters=iters, tol=1e-12)
    rel = (torch.linalg.vector_norm(recon - pert.image)
           / torch.linalg.vector_norm(pert.image)).item()
    return rel < tol


def perturb_measurements(kspace: torch.Tensor, pert: Perturbation,
                         coils: CoilSensitivities,
                         mask: SamplingMask) -> torch.Tensor:
    """y + E_mask p, touching sampled locations only."""
    if tuple(kspace.shape[-2:]) != pert.shape:
        raise ValueError("k-space and perturbation shapes disagree")
    return kspace + forward(pert.image, coils.maps, mask)


def estimate_perturbation(recon_perturbed: torch.Tensor,
                          recon_clean: torch.Tensor) -> torch.Tensor:
    """Difference of two reconstructions ran with identical parameters."""
    if recon_perturbed.shape != recon_clean.shape:
        raise ValueError("reconstruction shapes disagree")
    return recon_perturbed - recon_clean
