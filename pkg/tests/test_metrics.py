import numpy as np
import pytest
import torch

import spicmri as sm

If = torch.complex128


class TestPSNR:
    def test_exact_match_caps(self):
        img = sm.simulate_phantom(32, 32, seed=0)
        assert sm.psnr(img, img) == 99.0

    def test_known_mse(self):
        ref = np.zeros((32, 32))
        ref[0, 0] = 1.0
        est = ref + 0.1  # MSE = 0.01, peak = 1 -> 20 dB
        assert abs(sm.psnr(ref, est) - 20.0) < 1e-12

    def test_joint_scaling_invariant(self):
        rng = np.random.default_rng(0)
        ref = rng.random((32, 32))
        est = ref + 0.05 * rng.random((32, 32))
        assert abs(sm.psnr(ref, est) - sm.psnr(2 * ref, 2 * est)) < 1e-12

    def test_decreasing_in_mse(self):
        ref = np.ones((16, 16))
        vals = [sm.psnr(ref, ref + s) for s in (0.01, 0.02, 0.05, 0.1)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            sm.psnr(np.zeros((8, 8)), np.ones((8, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sm.psnr(np.ones((8, 8)), np.ones((4, 4)))


class TestSSIM:
    def test_identical_is_one(self):
        img = sm.simulate_phantom(32, 32, seed=1)
        assert sm.ssim(img, img) == 1.0

    def test_monotone_noise_sweep(self):
        rng = np.random.default_rng(2)
        ref = np.abs(sm.simulate_phantom(64, 64, seed=3).numpy())
        noise = rng.standard_normal(ref.shape)
        vals = [sm.ssim(ref, ref + s * noise)
                for s in (0.01, 0.03, 0.1, 0.3)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_constant_images_closed_form(self):
        mu1, mu2 = 0.8, 0.5
        ref = np.full((32, 32), mu1)
        est = np.full((32, 32), mu2)
        c1 = (0.01 * mu1) ** 2
        want = (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)
        assert abs(sm.ssim(ref, est) - want) < 1e-12

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            sm.ssim(np.ones((8, 8)), np.ones((8, 8)))

    def test_range(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        v = sm.ssim(a, b)
        assert -1.0 <= v <= 1.0
