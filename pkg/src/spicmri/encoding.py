"""Multi-coil Cartesian encoding operator: forward, adjoint and noise.

Conventions: images are complex tensors of shape (rows, cols); k-space is
(n_coils, rows, cols) with the DC sample at the array centre
(``fftshift`` applied to the unitary 2D DFT output).  Masks zero the
unsampled locations exactly.
"""

from __future__ import annotations

import numpy as np
import torch

from .sampling import SamplingMask


def fft2c(x: torch.Tensor) -> torch.Tensor:
    """Unitary 2D DFT with centred k-space output."""
    return torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=(-2, -1))


def ifft2c(y: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft2c`."""
    return torch.fft.ifft2(torch.fft.ifftshift(y, dim=(-2, -1)), norm="ortho")


def _check_grid(image_shape, maps: torch.Tensor, mask: SamplingMask) -> None:
    if tuple(maps.shape[-2:]) != tuple(image_shape):
        raise ValueError(
            f"coil maps {tuple(maps.shape)} do not match image {image_shape}")
    if (mask.n_pe, mask.n_ro) != tuple(image_shape):
        raise ValueError(
            f"mask {(mask.n_pe, mask.n_ro)} does not match image {image_shape}")


def forward(image: torch.Tensor, maps: torch.Tensor,
            mask: SamplingMask) -> torch.Tensor:
    """Apply the masked multi-coil encoding: per coil, mask(F(S_c * x))."""
    if image.ndim != 2:
        raise ValueError("expected a 2D image")
    _check_grid(image.shape, maps, mask)
    sel = mask.tensor().to(image.real.dtype)
    return fft2c(maps * image) * sel


def adjoint(kspace: torch.Tensor, maps: torch.Tensor,
            mask: SamplingMask) -> torch.Tensor:
    """Hermitian transpose of :func:`forward`: sum_c conj(S_c) F^-1(mask y_c)."""
    if kspace.ndim != 3 or kspace.shape[0] != maps.shape[0]:
        raise ValueError(
            f"k-space {tuple(kspace.shape)} does not match maps "
            f"{tuple(maps.shape)}")
    _check_grid(kspace.shape[-2:], maps, mask)
    sel = mask.tensor().to(kspace.real.dtype)
    return (maps.conj() * ifft2c(kspace * sel)).sum(dim=0)


def add_noise(kspace: torch.Tensor, mask: SamplingMask, sigma: float,
              seed: int) -> torch.Tensor:
    """Add i.i.d. complex Gaussian noise (per-component std ``sigma``) at the
    sampled locations only; deterministic for a fixed seed."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return kspace
    rng = np.random.default_rng(seed)
    draw = rng.standard_normal(size=(2,) + tuple(kspace.shape))
    noise = torch.complex(
        torch.from_numpy(draw[0]), torch.from_numpy(draw[1])
    ).to(kspace.dtype) * sigma
    sel = mask.tensor().to(kspace.real.dtype)
    return kspace + noise * sel
