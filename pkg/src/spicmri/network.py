"""Unrolled variable-splitting reconstructor.

The regularizer is a compact bias-free residual CNN acting on the stacked
real/imaginary channels; the data-fidelity step solves
(E^H E + mu I) x = E^H y + mu z with a fixed number of CG iterations.  One
parameter set is shared by all unroll steps, and mu is a trainable scalar
kept positive through a softplus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .cg import cg_normal
from .data import CoilSensitivities
from .encoding import adjoint
from .sampling import SamplingMask

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class UnrolledConfig:
    unrolls: int = 5          # T
    cg_iters: int = 10
    blocks: int = 3
    channels: int = 16
    kernel: int = 3
    precision: int = 64

    def __post_init__(self):
        if self.unrolls < 1 or self.cg_iters < 1:
            raise ValueError("unrolls and cg_iters must be >= 1")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.channels < 2 or self.channels % 2 != 0:
            raise ValueError("channels must be even and >= 2")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def hidden(self) -> int:
        return self.channels // 2

    @property
    def real_dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == 64 else torch.float32

    @property
    def complex_dtype(self) -> torch.dtype:
        return torch.complex128 if self.precision == 64 else torch.complex64

    def parameter_count(self) -> int:
        k2 = self.kernel * self.kernel
        c, h = self.channels, self.hidden
        head = 2 * c * k2
        per_block = c * h * k2 + h * c * k2
        tail = c * c * k2
        proj = c * 2 * k2
        return head + self.blocks * per_block + tail + proj + 1


@dataclass
class RegularizerParams:
    """Bias-free conv weights plus the unconstrained data-fidelity scalar."""

    head: torch.Tensor
    blocks: list[tuple[torch.Tensor, torch.Tensor]]
    tail: torch.Tensor
    proj: torch.Tensor
    mu_raw: torch.Tensor
    config: UnrolledConfig = field(repr=False, default=None)

    def tensors(self) -> list[torch.Tensor]:
        out = [self.head]
        for w1, w2 in self.blocks:
            out.extend((w1, w2))
        out.extend((self.tail, self.proj, self.mu_raw))
        return out

    def n_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors())

    @property
    def mu(self) -> torch.Tensor:
        return F.softplus(self.mu_raw)

    def requires_grad_(self, flag: bool = True) -> "RegularizerParams":
        for t in self.tensors():
            t.requires_grad_(flag)
        return self

    def detach_clone(self) -> "RegularizerParams":
        def d(t):
            return t.detach().clone()
        return RegularizerParams(
            head=d(self.head),
            blocks=[(d(a), d(b)) for a, b in self.blocks],
            tail=d(self.tail), proj=d(self.proj), mu_raw=d(self.mu_raw),
            config=self.config)

    def zeros_like(self) -> "RegularizerParams":
        def z(t):
            return torch.zeros_like(t)
        return RegularizerParams(
            head=z(self.head),
            blocks=[(z(a), z(b)) for a, b in self.blocks],
            tail=z(self.tail), proj=z(self.proj), mu_raw=z(self.mu_raw),
            config=self.config)

    def flat(self) -> torch.Tensor:
        return torch.cat([t.detach().reshape(-1) for t in self.tensors()])


MU_INIT = 0.05


def init_params(cfg: UnrolledConfig, seed: int) -> RegularizerParams:
    """Fan-in-scaled random init; the output projection starts at zero so
    the initial network is the identity-plus-data-fidelity map."""
    gen = torch.Generator().manual_seed(seed)
    dt = cfg.real_dtype
    k = cfg.kernel

    def conv(c_out, c_in):
        fan_in = c_in * k * k
        std = math.sqrt(2.0 / fan_in)
        return torch.randn((c_out, c_in, k, k), generator=gen,
                           dtype=torch.float64).to(dt) * std

    head = conv(cfg.channels, 2)
    blocks = [(conv(cfg.hidden, cfg.channels), conv(cfg.channels, cfg.hidden))
              for _ in range(cfg.blocks)]
    tail = conv(cfg.channels, cfg.channels)
    proj = torch.zeros((2, cfg.channels, k, k), dtype=dt)
    mu_raw = torch.tensor(math.log(math.expm1(MU_INIT)), dtype=dt)
    return RegularizerParams(head=head, blocks=blocks, tail=tail, proj=proj,
                             mu_raw=mu_raw, config=cfg)


def regularizer_apply(x: torch.Tensor,
                      params: RegularizerParams) -> torch.Tensor:
    """Complex image -> 2 real channels -> residual conv stack -> complex."""
    cfg = params.config
    if x.ndim != 2:
        raise ValueError("expected a 2D image")
    pad = cfg.kernel // 2
    u = torch.stack((x.real, x.imag)).unsqueeze(0).to(cfg.real_dtype)
    h0 = F.conv2d(u, params.head, padding=pad)
    h = h0
    for w1, w2 in params.blocks:
        h = h + F.conv2d(F.relu(F.conv2d(h, w1, padding=pad)), w2, padding=pad)
    h = F.conv2d(h, params.tail, padding=pad) + h0
    out = F.conv2d(h, params.proj, padding=pad)[0]
    return x + torch.complex(out[0], out[1]).to(x.dtype)


def unrolled_forward(kspace: torch.Tensor, coils: CoilSensitivities,
                     mask: SamplingMask, params: RegularizerParams,
                     cfg: UnrolledConfig | None = None) -> torch.Tensor:
    """T alternations of {denoise, CG data fidelity}, warm-started from the
    current denoised estimate; weights shared across steps."""
    cfg = cfg or params.config
    x = adjoint(kspace, coils.maps, mask)
    mu = params.mu
    for step in range(cfg.unrolls):
        z = regularizer_apply(x, params)
        try:
            x = cg_normal(kspace, coils.maps, mask, mu=mu, anchor=z,
                          iters=cfg.cg_iters, tol=None, x0=z)
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"unroll step {step}: {exc}") from exc
        if not bool(torch.isfinite(x.real).all()):
            raise FloatingPointError(
                f"unroll step {step}: non-finite reconstruction")
    return x


# ---------------------------------------------------------------------------
# Checkpoints: JSON header + NUL + raw 64-bit little-endian parameters.
# ---------------------------------------------------------------------------


def save_checkpoint(params: RegularizerParams, path: str, step: int = 0,
                    seed_lineage: dict | None = None) -> None:
    cfg = params.config
    header = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "unrolls": cfg.unrolls, "cg_iters": cfg.cg_iters,
            "blocks": cfg.blocks, "channels": cfg.channels,
            "kernel": cfg.kernel, "precision": cfg.precision,
        },
        "step": step,
        "seed_lineage": seed_lineage or {},
        "n_parameters": params.n_parameters(),
    }
    payload = params.flat().to(torch.float64).numpy().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\x00")
        fh.write(payload)


def load_checkpoint(path: str) -> tuple[RegularizerParams, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\x00")
    if sep < 0:
        raise ValueError("missing checkpoint header separator")
    header = json.loads(blob[:sep].decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {header.get('version')!r}")
    cfg = UnrolledConfig(**header["config"])
    flat = np.frombuffer(blob[sep + 1:], dtype="<f8")
    if flat.size != cfg.parameter_count():
        raise ValueError(
            f"parameter payload size mismatch: expected "
            f"{cfg.parameter_count()}, found {flat.size}")
    params = init_params(cfg, seed=0)
    off = 0
    new_tensors = []
    for t in params.tensors():
        n = t.numel()
        chunk = torch.from_numpy(flat[off:off + n].copy()).to(cfg.real_dtype)
        new_tensors.append(chunk.reshape(t.shape))
        off += n
    head = new_tensors[0]
    blocks = [(new_tensors[1 + 2 * i], new_tensors[2 + 2 * i])
              for i in range(cfg.blocks)]
    tail, proj, mu_raw = new_tensors[-3], new_tensors[-2], new_tensors[-1]
    out = RegularizerParams(head=head, blocks=blocks, tail=tail, proj=proj,
                            mu_raw=mu_raw, config=cfg)
    return out, header
