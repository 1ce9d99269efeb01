"""Acquisition masks, self-supervision splits and shifted patterns.

Masks live on an (n_pe, n_ro) grid: phase-encode rows may be skipped, the
readout direction is always fully sampled for acquisition masks, but split
masks (theta/lambda) select individual k-space points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class SamplingMask:
    """A set of sampled k-space locations with acceleration metadata.

    ``sampled`` is a boolean (n_pe, n_ro) array; ``acs_rows`` is the
    contiguous, fully sampled calibration row range; ``accel`` is the
    declared acceleration R.
    """

    n_pe: int
    n_ro: int
    sampled: np.ndarray
    acs_rows: range = field(default_factory=lambda: range(0))
    accel: int = 1

    def __post_init__(self):
        s = np.asarray(self.sampled, dtype=bool)
        if s.shape != (self.n_pe, self.n_ro):
            raise ValueError("sampled array shape does not match grid")
        object.__setattr__(self, "sampled", s)
        for r in self.acs_rows:
            if r < 0 or r >= self.n_pe:
                raise ValueError("ACS rows outside grid")
            if not s[r].all():
                raise ValueError(f"ACS row {r} is not fully sampled")

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.sampled)

    @property
    def n_sampled(self) -> int:
        return int(self.sampled.sum())

    def point_set(self) -> set[tuple[int, int]]:
        rr, cc = np.nonzero(self.sampled)
        return set(zip(rr.tolist(), cc.tolist()))

    def acs_point_mask(self) -> np.ndarray:
        out = np.zeros_like(self.sampled)
        if len(self.acs_rows):
            out[self.acs_rows.start:self.acs_rows.stop] = True
        return out

    def to_text(self) -> str:
        """Portable bitmap: one line of 0/1 characters per phase-encode row."""
        return "\n".join("".join("1" if v else "0" for v in row)
                         for row in self.sampled) + "\n"

    def descriptor(self) -> dict:
        return {
            "n_pe": self.n_pe,
            "n_ro": self.n_ro,
            "accel": self.accel,
            "acs_rows": [self.acs_rows.start, self.acs_rows.stop],
            "n_sampled": self.n_sampled,
        }

    def descriptor_json(self) -> str:
        return json.dumps(self.descriptor(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class SSDUSplit:
    """K disjoint (theta, lambda) partitions of an acquisition mask."""

    n_masks: int
    pairs: tuple[tuple[SamplingMask, SamplingMask], ...]
    rho: float

    def __post_init__(self):
        if self.n_masks != len(self.pairs):
            raise ValueError("n_masks does not match pair count")


def equidistant_mask(n_pe: int, n_ro: int, accel: int,
                     n_acs: int) -> SamplingMask:
    """Uniform row undersampling (rows 0, R, 2R, ...) plus a centred,
    fully sampled ACS block of ``n_acs`` rows."""
    if not 1 <= accel <= n_pe:
        raise ValueError("acceleration must satisfy 1 <= R <= n_pe")
    if not 0 <= n_acs <= n_pe:
        raise ValueError("ACS row count must satisfy 0 <= n_acs <= n_pe")
    sampled = np.zeros((n_pe, n_ro), dtype=bool)
    sampled[0::accel] = True
    start = (n_pe - n_acs) // 2
    sampled[start:start + n_acs] = True
    acs = range(start, start + n_acs) if n_acs else range(0)
    return SamplingMask(n_pe, n_ro, sampled, acs, accel)


def ssdu_split(omega: SamplingMask, rho: float, n_masks: int,
               seed: int) -> SSDUSplit:
    """Draw K independent disjoint partitions (theta_k, lambda_k) of omega.

    lambda_k holds round(rho/(1+rho) * |omega|) points drawn uniformly
    without replacement from the non-ACS sampled points; theta_k is the
    complement within omega and keeps the whole ACS block.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if n_masks < 1:
        raise ValueError("need at least one mask pair")
    acs = omega.acs_point_mask()
    candidates = omega.sampled & ~acs
    cand_idx = np.flatnonzero(candidates.reshape(-1))
    n_lambda = int(round(rho / (1.0 + rho) * omega.n_sampled))
    if n_lambda > cand_idx.size:
        raise ValueError(
            f"requested |lambda| = {n_lambda} exceeds the "
            f"{cand_idx.size} available non-ACS points")
    if n_lambda == 0:
        raise ValueError("rho too small: empty lambda mask")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_masks):
        pick = rng.choice(cand_idx, size=n_lambda, replace=False)
        lam = np.zeros(omega.n_pe * omega.n_ro, dtype=bool)
        lam[pick] = True
        lam = lam.reshape(omega.n_pe, omega.n_ro)
        theta = omega.sampled & ~lam
        pairs.append((
            SamplingMask(omega.n_pe, omega.n_ro, theta, omega.acs_rows,
                         omega.accel),
            SamplingMask(omega.n_pe, omega.n_ro, lam, range(0), omega.accel),
        ))
    return SSDUSplit(n_masks=n_masks, pairs=tuple(pairs), rho=rho)


def shifted_patterns(omega: SamplingMask, count: int,
                     seed: int) -> list[SamplingMask]:
    """Equidistant patterns shifted by distinct nonzero offsets (mod n_pe),
    drawn without replacement; the ACS block is kept unchanged."""
    accel = omega.accel
    if accel < 2:
        raise ValueError("shifted patterns need a declared acceleration >= 2")
    if not 1 <= count <= accel - 1:
        raise ValueError(f"count must lie in [1, {accel - 1}]")
    base = equidistant_mask(omega.n_pe, omega.n_ro, accel, len(omega.acs_rows))
    if not np.array_equal(base.sampled, omega.sampled):
        raise ValueError("mask is not an equidistant pattern for its "
                         "declared acceleration")
    rng = np.random.default_rng(seed)
    offsets = rng.choice(np.arange(1, accel), size=count, replace=False)
    out = []
    for off in offsets:
        rows = (np.arange(0, omega.n_pe, accel) + int(off)) % omega.n_pe
        sampled = np.zeros_like(omega.sampled)
        sampled[rows] = True
        if len(omega.acs_rows):
            sampled[omega.acs_rows.start:omega.acs_rows.stop] = True
        out.append(SamplingMask(omega.n_pe, omega.n_ro, sampled,
                                omega.acs_rows, accel))
    return out
