import numpy as np
import pytest
import torch

import spicmri as sm
from conftest import random_image

If = torch.complex128


def _forward(img, levels=3, kind="dtcwt"):
    return sm.wavelet_forward(img, levels=levels, kind=kind)


class TestDTCWT:
    def test_constant_image_highpass_vanishes(self):
        img = torch.full((64, 64), 1.0 + 0.0j, dtype=If)
        w = _forward(img, levels=2)
        worst = max(z.abs().max().item() for z in w.highs)
        assert worst < 1e-10

    def test_coefficient_count_bookkeeping(self):
        img = random_image(np.random.default_rng(0), 64, 64)
        w = _forward(img, levels=3)
        total = w.lowpass.shape[-2] * w.lowpass.shape[-1]
        for z in w.highs:
            total += z.shape[-3] * z.shape[-2] * z.shape[-1]
        assert w.n_coefficients == total == 8320

    @pytest.mark.parametrize("kind", ["dtcwt", "dwt"])
    def test_perfect_reconstruction_50_images(self, kind):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(50):
            img = random_image(rng, 64, 64)
            back = sm.wavelet_inverse(_forward(img, 3, kind))
            rel = ((back - img).abs().max()
                   / img.abs().max()).item()
            worst = max(worst, rel)
        assert worst < 1e-10

    def test_impulse_roundtrip_and_shift_invariance(self):
        img = torch.zeros((64, 64), dtype=If)
        img[32, 32] = 1.0
        w = _forward(img, 3)
        back = sm.wavelet_inverse(w)
        assert (back - img).abs().max() < 1e-10
        # orientation-subband magnitude energy moves < 5% under a 1-px shift
        for dr, dc in ((1, 0), (0, 1)):
            shifted = torch.zeros((64, 64), dtype=If)
            shifted[32 + dr, 32 + dc] = 1.0
            e0 = _forward(img, 3).subband_energies()
            e1 = _forward(shifted, 3).subband_energies()
            rel = ((e1 - e0).abs() / e0).max().item()
            assert rel < 0.05

    def test_inverse_linearity(self):
        rng = np.random.default_rng(2)
        a = _forward(random_image(rng, 32, 32), 2)
        b = _forward(random_image(rng, 32, 32), 2)
        ca, cb = 1.3, -0.7
        combo = sm.WaveletCoeffs(
            kind="dtcwt", levels=2,
            lowpass=ca * a.lowpass + cb * b.lowpass,
            highs=[ca * za + cb * zb for za, zb in zip(a.highs, b.highs)])
        lhs = sm.wavelet_inverse(combo)
        rhs = (ca * sm.wavelet_inverse(a) + cb * sm.wavelet_inverse(b))
        assert (lhs - rhs).abs().max() < 1e-12

    @pytest.mark.parametrize("size,levels", [(16, 3), (16, 4), (24, 3),
                                             (32, 4), (48, 4), (64, 5)])
    def test_pr_small_grids_and_deep_levels(self, size, levels):
        rng = np.random.default_rng(size * 10 + levels)
        img = random_image(rng, size, size)
        back = sm.wavelet_inverse(_forward(img, levels))
        assert (back - img).abs().max() < 1e-10

    def test_zero_coefficients_zero_image(self):
        w = _forward(torch.zeros((32, 32), dtype=If), 2)
        assert sm.wavelet_inverse(w).abs().max() == 0

    def test_indivisible_shape_rejected(self):
        with pytest.raises(ValueError):
            _forward(torch.zeros((48, 48), dtype=If), 5)
        with pytest.raises(ValueError, match="levels"):
            _forward(torch.zeros((64, 64), dtype=If), 0)

    def test_dwt_identity_at_level0(self):
        img = random_image(np.random.default_rng(3), 16, 16)
        w = _forward(img, 0, "dwt")
        assert w.n_coefficients == 256
        assert torch.equal(sm.wavelet_inverse(w), img)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            _forward(torch.zeros((16, 16), dtype=If), 2, "db4")


class TestWeightedL1:
    def test_zero_estimate_is_zero(self):
        p = sm.generate_perturbation(64, 64, 4, seed=0)
        val = sm.weighted_l1(torch.zeros_like(p.image), p.image)
        assert float(val) == 0.0

    def test_identity_transform_toy(self):
        p_true = torch.tensor([2.0, 0.0], dtype=If).reshape(1, 2)
        p_est = torch.tensor([1.0, 1.0], dtype=If).reshape(1, 2)
        val = sm.weighted_l1(p_est, p_true, levels=0, kind="dwt", eps=0.01)
        assert abs(float(val) - 0.5 * (1 / 2.01 + 1 / 0.01)) < 1e-12

    def test_matched_estimate_counts_support(self):
        """With a wavelet-sparse reference whose kept coefficients are well
        above eps, the matched value approaches (support count)/N."""
        base = sm.generate_perturbation(64, 64, 4, seed=1)
        w = sm.wavelet_forward(base.image, levels=3, kind="dwt")
        thresh = 0.05 * w.magnitudes().max()
        keep_low = w.lowpass.abs() >= thresh
        lowpass = torch.where(keep_low, w.lowpass,
                              torch.zeros_like(w.lowpass))
        highs = []
        for z in w.highs:
            highs.append(torch.where(z.abs() >= thresh, z,
                                     torch.zeros_like(z)))
        sparse = sm.wavelet_inverse(sm.WaveletCoeffs(
            kind="dwt", levels=3, lowpass=lowpass, highs=highs))
        ws = sm.wavelet_forward(sparse, levels=3, kind="dwt")
        mags = ws.magnitudes()
        k = int((mags > 1e-12).sum())
        val = float(sm.weighted_l1(sparse, sparse, levels=3, kind="dwt",
                                   eps=1e-4))
        assert abs(val - k / ws.n_coefficients) / (k / ws.n_coefficients) < 0.02

    def test_aliased_displacement_penalized(self):
        rows = cols = 64
        img = torch.zeros((rows, cols), dtype=If)
        img[8:11, 30:33] = 0.5
        displaced = torch.roll(img, shifts=rows // 4, dims=0)
        matched = float(sm.weighted_l1(img, img))
        wrong = float(sm.weighted_l1(displaced, img))
        assert wrong > 10 * matched

    def test_absolute_homogeneity_in_estimate(self):
        rng = np.random.default_rng(4)
        p_true = random_image(rng, 32, 32)
        p_est = random_image(rng, 32, 32)
        base = float(sm.weighted_l1(p_est, p_true, levels=2))
        scaled = float(sm.weighted_l1(3.5 * p_est, p_true, levels=2))
        assert abs(scaled - 3.5 * base) < 1e-10 * max(1.0, base)

    def test_validation(self):
        a = torch.zeros((16, 16), dtype=If)
        with pytest.raises(ValueError):
            sm.weighted_l1(a, torch.zeros((8, 8), dtype=If))
        with pytest.raises(ValueError):
            sm.weighted_l1(a, a, eps=0.0)


class TestPicL2:
    def test_matched_is_zero(self):
        p = sm.generate_perturbation(64, 64, 4, seed=2)
        assert float(sm.pic_l2(p.image, p.image)) == 0.0

    def test_zero_estimate_is_one(self):
        p = sm.generate_perturbation(64, 64, 4, seed=3)
        assert abs(float(sm.pic_l2(torch.zeros_like(p.image), p.image)) - 1) < 1e-12

    def test_double_estimate_is_one(self):
        p = sm.generate_perturbation(64, 64, 4, seed=4)
        assert abs(float(sm.pic_l2(2 * p.image, p.image)) - 1) < 1e-12

    def test_zero_reference_rejected(self):
        z = torch.zeros((8, 8), dtype=If)
        with pytest.raises(ValueError):
            sm.pic_l2(z, z)
