import numpy as np
import pytest
import torch

import spicmri as sm


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def full_support_64():
    return torch.ones((64, 64), dtype=torch.bool)


@pytest.fixture(scope="session")
def coils8_64(full_support_64):
    return sm.simulate_coils(64, 64, 8, full_support_64)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Two noiseless 64x64 slices, 8 coils."""
    return sm.build_dataset(2, 64, 64, 8, sm.NoiseSpec(), seed=42)


def random_image(rng: np.random.Generator, rows: int, cols: int) -> torch.Tensor:
    arr = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    return torch.from_numpy(arr)


def random_kspace(rng: np.random.Generator, coils: int, rows: int,
                  cols: int) -> torch.Tensor:
    arr = (rng.standard_normal((coils, rows, cols))
           + 1j * rng.standard_normal((coils, rows, cols)))
    return torch.from_numpy(arr)


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    return float(torch.linalg.vector_norm(a - b)
                 / torch.linalg.vector_norm(b))
