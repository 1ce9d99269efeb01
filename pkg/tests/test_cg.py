import numpy as np
import pytest
import torch

import spicmri as sm
from conftest import random_image, random_kspace, rel_err
from test_encoding import dense_encoding_matrix

If = torch.complex128


def dense_solve(maps, mask, mu, y, z):
    e = dense_encoding_matrix(maps.numpy(), mask.sampled)
    n = maps.shape[1] * maps.shape[2]
    a = e.conj().T @ e + mu * np.eye(n)
    b = e.conj().T @ y.numpy().reshape(-1)
    if z is not None:
        b = b + mu * z.numpy().reshape(-1)
    return np.linalg.solve(a, b).reshape(maps.shape[1], maps.shape[2])


class TestCGNormal:
    def test_identity_system_converges_immediately(self):
        rng = np.random.default_rng(0)
        coils = sm.simulate_coils(16, 16, 1,
                                  torch.ones((16, 16), dtype=torch.bool))
        full = sm.full_mask(16, 16)
        y = random_kspace(rng, 1, 16, 16)
        x = sm.cg_normal(y, coils.maps, full, iters=2, tol=None)
        assert (x - sm.ifft2c(y)[0]).abs().max() < 1e-10

    def test_large_mu_returns_anchor(self):
        rng = np.random.default_rng(1)
        coils = sm.simulate_coils(16, 16, 4,
                                  torch.ones((16, 16), dtype=torch.bool))
        mask = sm.equidistant_mask(16, 16, 2, 4)
        y = random_kspace(rng, 4, 16, 16)
        y = y / torch.linalg.vector_norm(sm.adjoint(y, coils.maps, mask))
        z = random_image(rng, 16, 16)
        x = sm.cg_normal(y, coils.maps, mask, mu=1e8, anchor=z, iters=30,
                         tol=1e-14)
        assert rel_err(x, z) < 1e-6

    @pytest.mark.parametrize("mu", [0.0, 0.05, 1.0])
    def test_matches_dense_oracle(self, mu):
        rng = np.random.default_rng(2)
        coils = sm.simulate_coils(16, 16, 4,
                                  torch.ones((16, 16), dtype=torch.bool))
        mask = sm.equidistant_mask(16, 16, 2, 4)
        y = random_kspace(rng, 4, 16, 16)
        z = random_image(rng, 16, 16) if mu > 0 else None
        want = dense_solve(coils.maps, mask, mu, y, z)
        got = sm.cg_normal(y, coils.maps, mask, mu=mu, anchor=z, iters=200,
                           tol=1e-14).numpy()
        assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-8

    def test_mu_without_anchor_rejected(self):
        coils = sm.simulate_coils(16, 16, 2,
                                  torch.ones((16, 16), dtype=torch.bool))
        with pytest.raises(ValueError):
            sm.cg_normal(torch.zeros((2, 16, 16), dtype=If), coils.maps,
                         sm.full_mask(16, 16), mu=0.1, anchor=None, iters=5)

    def test_monotone_residual(self):
        rng = np.random.default_rng(3)
        coils = sm.simulate_coils(16, 16, 4,
                                  torch.ones((16, 16), dtype=torch.bool))
        mask = sm.equidistant_mask(16, 16, 2, 2)
        y = random_kspace(rng, 4, 16, 16)
        z = random_image(rng, 16, 16)

        def residual(iters):
            x = sm.cg_normal(y, coils.maps, mask, mu=0.05, anchor=z,
                             iters=iters, tol=None)
            b = sm.adjoint(y, coils.maps, mask) + 0.05 * z
            ax = sm.adjoint(sm.forward(x, coils.maps, mask), coils.maps,
                            mask) + 0.05 * x
            return torch.linalg.vector_norm(b - ax).item()

        res = [residual(k) for k in range(1, 16)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(res, res[1:]))


class TestCGSense:
    def test_identifiable_recovery_r2(self):
        gt = sm.simulate_phantom(64, 64, seed=9)
        coils = sm.simulate_coils(64, 64, 8, gt.abs() > 0)
        mask = sm.equidistant_mask(64, 64, 2, 0)
        y = sm.forward(gt, coils.maps, mask)
        x = sm.cg_sense(y, coils.maps, mask, iters=50, tol=1e-10)
        assert rel_err(x, gt) < 1e-5

    def test_full_mask_recovers(self, coils8_64):
        gt = sm.simulate_phantom(64, 64, seed=10)
        full = sm.full_mask(64, 64)
        y = sm.forward(gt, coils8_64.maps, full)
        x = sm.cg_sense(y, coils8_64.maps, full, iters=20, tol=1e-13)
        assert rel_err(x, gt) < 1e-8

    def test_zero_input(self, coils8_64):
        y = torch.zeros((8, 64, 64), dtype=If)
        x = sm.cg_sense(y, coils8_64.maps, sm.equidistant_mask(64, 64, 2, 8))
        assert x.abs().max() == 0

    def test_linearity_at_fixed_iterations(self):
        rng = np.random.default_rng(4)
        coils = sm.simulate_coils(32, 32, 8,
                                  torch.ones((32, 32), dtype=torch.bool))
        mask = sm.equidistant_mask(32, 32, 2, 4)
        y1 = random_kspace(rng, 8, 32, 32)
        y2 = random_kspace(rng, 8, 32, 32)
        a, b = 0.7 - 1.1j, 2.2 + 0.4j

        def f(y):
            return sm.cg_normal(y, coils.maps, mask, iters=12, tol=None)

        lhs = f(a * y1 + b * y2)
        rhs = a * f(y1) + b * f(y2)
        assert rel_err(lhs, rhs) < 1e-8
