"""Synthetic multi-coil data: phantoms, coil maps, datasets and their
on-disk format (JSON header + NUL + raw interleaved complex payload)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .encoding import add_noise, forward
from .sampling import SamplingMask

FORMAT_VERSION = 1

_DTYPES = {"complex64": "<c8", "complex128": "<c16"}


@dataclass(frozen=True)
class NoiseSpec:
    """Per-component standard deviation of complex Gaussian k-space noise."""

    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class CoilSensitivities:
    maps: torch.Tensor          # (n_coils, rows, cols) complex
    support: torch.Tensor       # (rows, cols) bool

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]


@dataclass(frozen=True)
class DatasetSlice:
    ground_truth: torch.Tensor  # (rows, cols) complex
    coils: CoilSensitivities
    full_kspace: torch.Tensor   # (n_coils, rows, cols) complex


@dataclass
class Dataset:
    slices: list[DatasetSlice]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.slices:
            raise ValueError("dataset needs at least one slice")
        shape = tuple(self.slices[0].ground_truth.shape)
        n_coils = self.slices[0].coils.n_coils
        for s in self.slices:
            if (tuple(s.ground_truth.shape) != shape
                    or s.coils.n_coils != n_coils):
                raise ValueError(
                    "all slices must share grid size and coil count")

    @property
    def grid(self) -> tuple[int, int]:
        return tuple(self.slices[0].ground_truth.shape)

    @property
    def n_coils(self) -> int:
        return self.slices[0].coils.n_coils


def simulate_phantom(rows: int, cols: int, seed: int,
                     dtype: torch.dtype = torch.complex128) -> torch.Tensor:
    """Piecewise-smooth phantom: random overlapping ellipses of distinct
    intensities over a small constant background, with a smooth low-order
    polynomial phase.  Peak magnitude is exactly 1."""
    if rows < 16 or cols < 16:
        raise ValueError("grid too small: need rows, cols >= 16")
    rng = np.random.default_rng(seed)
    v, u = np.meshgrid(np.linspace(-1.0, 1.0, cols),
                       np.linspace(-1.0, 1.0, rows))
    mag = np.full((rows, cols), 0.05)
    n_ell = int(rng.integers(4, 8))
    for _ in range(n_ell):
        cu, cv = rng.uniform(-0.55, 0.55, size=2)
        au, av = rng.uniform(0.12, 0.55, size=2)
        ang = rng.uniform(0.0, np.pi)
        w = rng.uniform(0.15, 0.9)
        ru = (u - cu) * np.cos(ang) + (v - cv) * np.sin(ang)
        rv = -(u - cu) * np.sin(ang) + (v - cv) * np.cos(ang)
        mag += w * (((ru / au) ** 2 + (rv / av) ** 2) <= 1.0)
    coeff = rng.uniform(-0.6, 0.6, size=6)
    phase = (coeff[0] + coeff[1] * u + coeff[2] * v + coeff[3] * u * u
             + coeff[4] * u * v + coeff[5] * v * v)
    mag = mag / mag.max()
    img = mag * np.exp(1j * phase)
    return torch.from_numpy(img).to(dtype)


def simulate_coils(rows: int, cols: int, n_coils: int,
                   support: torch.Tensor,
                   dtype: torch.dtype = torch.complex128) -> CoilSensitivities:
    """Gaussian-profile coils on the FOV perimeter with linear phase,
    phase-referenced to the first coil, sum-of-squares normalised on the
    support and zero outside it."""
    if n_coils < 1:
        raise ValueError("need at least one coil")
    sup = support.to(torch.bool)
    if tuple(sup.shape) != (rows, cols):
        raise ValueError("support shape does not match grid")
    u, v = np.meshgrid(np.arange(rows, dtype=float),
                       np.arange(cols, dtype=float), indexing="ij")
    radius = 0.55 * max(rows, cols)
    width = 0.7 * max(rows, cols)
    maps = np.empty((n_coils, rows, cols), dtype=np.complex128)
    for c in range(n_coils):
        ang = 2.0 * np.pi * c / n_coils + 0.5
        r0 = rows / 2.0 + radius * np.cos(ang)
        c0 = cols / 2.0 + radius * np.sin(ang)
        g = np.exp(-((u - r0) ** 2 + (v - c0) ** 2) / (2.0 * width ** 2))
        slope = 1.2 * np.pi / max(rows, cols)
        ph = slope * (np.cos(ang) * (u - rows / 2.0)
                      + np.sin(ang) * (v - cols / 2.0)) + 0.3 * c
        maps[c] = g * np.exp(1j * ph)
    ref = np.conj(maps[0]) / np.abs(maps[0])
    maps = maps * ref
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps = maps / sos
    maps[:, ~sup.numpy()] = 0.0
    return CoilSensitivities(maps=torch.from_numpy(maps).to(dtype),
                             support=sup)


def full_mask(rows: int, cols: int) -> SamplingMask:
    return SamplingMask(rows, cols, np.ones((rows, cols), dtype=bool),
                        range(0, rows), 1)


def build_dataset(n_slices: int, rows: int, cols: int, n_coils: int,
                  noise: NoiseSpec, seed: int,
                  dtype: torch.dtype = torch.complex128) -> Dataset:
    """Phantom + coils + fully sampled noisy k-space per slice."""
    if n_slices < 1:
        raise ValueError("need at least one slice")
    ss = np.random.SeedSequence(seed)
    phantom_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n_slices)]
    mask = full_mask(rows, cols)
    slices = []
    for i in range(n_slices):
        gt = simulate_phantom(rows, cols, phantom_seeds[i], dtype)
        support = gt.abs() > 0
        coils = simulate_coils(rows, cols, n_coils, support, dtype)
        ksp = forward(gt, coils.maps, mask)
        if noise.sigma > 0:
            nseed = int(np.random.SeedSequence(
                (noise.seed, i)).generate_state(1)[0])
            ksp = add_noise(ksp, mask, noise.sigma, nseed)
        slices.append(DatasetSlice(gt, coils, ksp))
    meta = {
        "n_slices": n_slices, "rows": rows, "cols": cols,
        "n_coils": n_coils, "seed": seed,
        "sigma": noise.sigma, "noise_seed": noise.seed,
    }
    return Dataset(slices=slices, metadata=meta)


def _np_dtype(name: str) -> np.dtype:
    if name not in _DTYPES:
        raise ValueError(f"unsupported dtype {name!r}")
    return np.dtype(_DTYPES[name])


def save_dataset(dataset: Dataset, path: str) -> None:
    """JSON header, one NUL byte, then per slice: ground truth, coil maps
    (coil-major), full k-space (coil-major), as raw interleaved
    (real, imag) little-endian pairs."""
    rows, cols = dataset.grid
    t = dataset.slices[0].ground_truth
    name = "complex64" if t.dtype == torch.complex64 else "complex128"
    np_dt = _np_dtype(name)
    header = {
        "version": FORMAT_VERSION,
        "n_slices": len(dataset.slices),
        "rows": rows, "cols": cols,
        "n_coils": dataset.n_coils,
        "dtype": name,
        "metadata": dataset.metadata,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\x00")
        for s in dataset.slices:
            fh.write(np.ascontiguousarray(
                s.ground_truth.numpy().astype(np_dt, copy=False)).tobytes())
            fh.write(np.ascontiguousarray(
                s.coils.maps.numpy().astype(np_dt, copy=False)).tobytes())
            fh.write(np.ascontiguousarray(
                s.full_kspace.numpy().astype(np_dt, copy=False)).tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\x00")
    if sep < 0:
        raise ValueError("missing header/payload separator")
    header = json.loads(blob[:sep].decode())
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {header.get('version')!r}")
    n_slices = header["n_slices"]
    rows, cols, n_coils = header["rows"], header["cols"], header["n_coils"]
    np_dt = _np_dtype(header["dtype"])
    t_dt = (torch.complex64 if header["dtype"] == "complex64"
            else torch.complex128)
    payload = blob[sep + 1:]
    per_slice = (rows * cols) * (1 + 2 * n_coils) * np_dt.itemsize
    if len(payload) != n_slices * per_slice:
        raise ValueError(
            f"payload size mismatch: expected {n_slices * per_slice} bytes, "
            f"found {len(payload)}")
    slices = []
    off = 0

    def take(count):
        nonlocal off
        arr = np.frombuffer(payload, dtype=np_dt, count=count, offset=off)
        off += count * np_dt.itemsize
        return arr

    for _ in range(n_slices):
        gt = torch.from_numpy(
            take(rows * cols).reshape(rows, cols).copy()).to(t_dt)
        maps = torch.from_numpy(
            take(n_coils * rows * cols).reshape(n_coils, rows, cols).copy()
        ).to(t_dt)
        ksp = torch.from_numpy(
            take(n_coils * rows * cols).reshape(n_coils, rows, cols).copy()
        ).to(t_dt)
        support = gt.abs() > 0
        slices.append(DatasetSlice(gt, CoilSensitivities(maps, support), ksp))
    return Dataset(slices=slices, metadata=header.get("metadata", {}))
