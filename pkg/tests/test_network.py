import numpy as np
import pytest
import torch

import spicmri as sm
from conftest import rel_err
from spicmri.losses import LossConfig, draw_step_samples, evaluate_loss
from spicmri.network import UnrolledConfig, init_params

If = torch.complex128

TINY = UnrolledConfig(unrolls=2, cg_iters=5, blocks=1, channels=4, kernel=3)


def tiny_problem(seed=0):
    """8x8 two-coil example; the grid is below the phantom minimum, so the
    ground truth is a smooth random image."""
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    gt = torch.from_numpy(base)
    gt = sm.ifft2c(sm.fft2c(gt))  # no-op; keeps dtype explicit
    coils = sm.simulate_coils(8, 8, 2, torch.ones((8, 8), dtype=torch.bool))
    full = sm.full_mask(8, 8)
    ksp = sm.forward(gt, coils.maps, full)
    sl = sm.DatasetSlice(ground_truth=gt, coils=coils, full_kspace=ksp)
    omega = sm.equidistant_mask(8, 8, 2, 2)
    return sl, omega


class TestParams:
    def test_parameter_count_formula_matches_enumeration(self):
        for cfg in (TINY, UnrolledConfig(),
                    UnrolledConfig(blocks=2, channels=8, kernel=5)):
            params = init_params(cfg, seed=0)
            assert params.n_parameters() == cfg.parameter_count()

    def test_paper_scale_parameter_count(self):
        cfg = UnrolledConfig(unrolls=10, cg_iters=15, blocks=15, channels=64,
                             kernel=3)
        assert cfg.parameter_count() == 592129

    def test_same_seed_same_params(self):
        a = init_params(TINY, seed=5)
        b = init_params(TINY, seed=5)
        for ta, tb in zip(a.tensors(), b.tensors()):
            assert torch.equal(ta, tb)
        c = init_params(TINY, seed=6)
        assert not torch.equal(a.head, c.head)

    def test_mu_positive(self):
        params = init_params(TINY, seed=0)
        assert abs(float(params.mu) - 0.05) < 1e-12
        for raw in (-50.0, -1.0, 0.0, 3.0):
            params.mu_raw = torch.tensor(raw, dtype=torch.float64)
            assert float(params.mu) > 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            UnrolledConfig(kernel=4)
        with pytest.raises(ValueError):
            UnrolledConfig(channels=7)
        with pytest.raises(ValueError):
            UnrolledConfig(unrolls=0)
        with pytest.raises(ValueError):
            UnrolledConfig(precision=16)


class TestRegularizer:
    def test_zero_projection_is_identity(self):
        params = init_params(TINY, seed=1)
        x = torch.randn((8, 8), dtype=If)
        assert torch.equal(sm.regularizer_apply(x, params), x)

    def test_zero_input_zero_output(self):
        params = init_params(TINY, seed=2)
        params.proj = torch.randn_like(params.proj)
        x = torch.zeros((8, 8), dtype=If)
        assert sm.regularizer_apply(x, params).abs().max() == 0

    def test_deterministic(self):
        params = init_params(TINY, seed=3)
        params.proj = torch.randn_like(params.proj)
        x = torch.randn((8, 8), dtype=If)
        assert torch.equal(sm.regularizer_apply(x, params),
                           sm.regularizer_apply(x, params))


class TestUnrolledForward:
    def test_single_coil_full_mask_recovers_truth(self):
        gt = sm.simulate_phantom(16, 16, seed=4)
        coils = sm.simulate_coils(16, 16, 1,
                                  torch.ones((16, 16), dtype=torch.bool))
        full = sm.full_mask(16, 16)
        y = sm.forward(gt, coils.maps, full)
        cfg = UnrolledConfig(unrolls=1, cg_iters=5, blocks=1, channels=4)
        params = init_params(cfg, seed=0)
        from spicmri.data import CoilSensitivities
        out = sm.unrolled_forward(y, CoilSensitivities(coils.maps,
                                                       coils.support),
                                  full, params, cfg)
        assert (out - gt).abs().max() < 1e-8

    def test_linear_in_measurements_with_identity_regularizer(self):
        sl, omega = tiny_problem()
        params = init_params(TINY, seed=1)  # zero proj -> identity map
        y = sl.full_kspace * omega.tensor().to(torch.float64)
        out1 = sm.unrolled_forward(y, sl.coils, omega, params, TINY)
        out2 = sm.unrolled_forward(2 * y, sl.coils, omega, params, TINY)
        assert rel_err(out2, 2 * out1) < 1e-12

    def test_depth_changes_output(self):
        sl, omega = tiny_problem()
        params = init_params(TINY, seed=2)
        params.proj = 0.05 * torch.randn(params.proj.shape,
                                         generator=torch.Generator().manual_seed(0),
                                         dtype=torch.float64)
        y = sl.full_kspace * omega.tensor().to(torch.float64)
        t1 = sm.unrolled_forward(y, sl.coils, omega, params,
                                 UnrolledConfig(unrolls=1, cg_iters=5,
                                                blocks=1, channels=4))
        t2 = sm.unrolled_forward(y, sl.coils, omega, params,
                                 UnrolledConfig(unrolls=2, cg_iters=5,
                                                blocks=1, channels=4))
        assert not torch.allclose(t1, t2)


class TestParameterSharing:
    def test_all_unroll_steps_reference_one_tensor_set(self, monkeypatch):
        sl, omega = tiny_problem()
        params = init_params(TINY, seed=5)
        import spicmri.network as net_mod

        seen = []
        real = net_mod.regularizer_apply

        def spy(x, p):
            seen.append(id(p))
            return real(x, p)

        monkeypatch.setattr(net_mod, "regularizer_apply", spy)
        y = sl.full_kspace * omega.tensor().to(torch.float64)
        net_mod.unrolled_forward(y, sl.coils, omega, params, TINY)
        assert len(seen) == TINY.unrolls
        assert set(seen) == {id(params)}


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        params = init_params(TINY, seed=7)
        params.proj = torch.randn_like(params.proj)
        path = str(tmp_path / "ckpt.bin")
        sm.save_checkpoint(params, path, step=12, seed_lineage={"seed": 7})
        loaded, header = sm.load_checkpoint(path)
        assert header["step"] == 12
        assert header["seed_lineage"] == {"seed": 7}
        for ta, tb in zip(params.tensors(), loaded.tensors()):
            assert torch.equal(ta, tb)

    def test_float32_roundtrip_bitwise(self, tmp_path):
        cfg = UnrolledConfig(unrolls=1, cg_iters=2, blocks=1, channels=4,
                             precision=32)
        params = init_params(cfg, seed=8)
        path = str(tmp_path / "ckpt32.bin")
        sm.save_checkpoint(params, path)
        loaded, _ = sm.load_checkpoint(path)
        assert loaded.head.dtype == torch.float32
        for ta, tb in zip(params.tensors(), loaded.tensors()):
            assert torch.equal(ta, tb)

    def test_version_rejected(self, tmp_path):
        params = init_params(TINY, seed=9)
        path = str(tmp_path / "ckpt.bin")
        sm.save_checkpoint(params, path)
        blob = open(path, "rb").read()
        import json
        sep = blob.find(b"\x00")
        header = json.loads(blob[:sep])
        header["version"] = 42
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode() + b"\x00" + blob[sep + 1:])
        with pytest.raises(ValueError, match="version"):
            sm.load_checkpoint(path)

    def test_payload_size_rejected(self, tmp_path):
        params = init_params(TINY, seed=10)
        path = str(tmp_path / "ckpt.bin")
        sm.save_checkpoint(params, path)
        blob = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(blob[:-8])
        with pytest.raises(ValueError, match="size mismatch"):
            sm.load_checkpoint(path)


def fd_gradient_check(method, n_params=25, h=1e-5, seed=0):
    """Central finite differences on randomly chosen parameters."""
    sl, omega = tiny_problem(seed=seed)
    params = init_params(TINY, seed=seed)
    # move off the identity init so every path is active
    gen = torch.Generator().manual_seed(100 + seed)
    params.proj = 0.05 * torch.randn(params.proj.shape, generator=gen,
                                     dtype=torch.float64)
    loss_cfg = LossConfig(method=method, n_masks=2, n_perturbations=2,
                          n_deltas=1, wavelet_kind="dtcwt", wavelet_levels=1,
                          beta=0.3)
    batch = [(sl, omega)]

    grad, base = sm.loss_gradient(batch, loss_cfg, params, TINY, seed=77)

    def loss_at(p):
        samples = draw_step_samples(
            omega, loss_cfg,
            int(np.random.SeedSequence((77, 0)).generate_state(1)[0]),
            dtype=torch.complex128)
        val, _ = evaluate_loss(sl, omega, samples, p, TINY, loss_cfg)
        return float(val)

    rng = np.random.default_rng(seed)
    tensors = params.tensors()
    grads = grad.tensors()
    worst = 0.0
    for _ in range(n_params):
        ti = int(rng.integers(len(tensors)))
        t = tensors[ti]
        flat_idx = int(rng.integers(t.numel()))
        orig = t.reshape(-1)[flat_idx].item()
        t.reshape(-1)[flat_idx] = orig + h
        up = loss_at(params)
        t.reshape(-1)[flat_idx] = orig - h
        down = loss_at(params)
        t.reshape(-1)[flat_idx] = orig
        fd = (up - down) / (2 * h)
        an = grads[ti].reshape(-1)[flat_idx].item()
        scale = max(abs(fd), abs(an), 1e-8)
        worst = max(worst, abs(fd - an) / scale)
    return worst


class TestGradients:
    def test_constant_loss_zero_gradient(self):
        sl, omega = tiny_problem()
        params = init_params(TINY, seed=0).requires_grad_(True)
        value = (params.head * 0).sum()
        grads = torch.autograd.grad(value, params.tensors(),
                                    allow_unused=True)
        assert all(g is None or g.abs().max() == 0 for g in grads)

    @pytest.mark.parametrize("method", ["supervised", "mmssdu", "spicssdu"])
    def test_finite_difference_agreement_fast(self, method):
        assert fd_gradient_check(method, n_params=8) < 1e-5

    def test_spic_gradient_flows_through_both_passes(self):
        """Detaching the perturbed pass must change the gradient."""
        sl, omega = tiny_problem()
        params = init_params(TINY, seed=3)
        gen = torch.Generator().manual_seed(11)
        params.proj = 0.05 * torch.randn(params.proj.shape, generator=gen,
                                         dtype=torch.float64)
        loss_cfg = LossConfig(method="spicssdu", n_masks=1,
                              n_perturbations=1, wavelet_levels=1, beta=1.0)
        samples = draw_step_samples(omega, loss_cfg, 5,
                                    dtype=torch.complex128)
        kspace = sl.full_kspace

        from spicmri.encoding import forward as enc_forward
        from spicmri.wavelets import weighted_l1

        def spic_term(detach_perturbed):
            y_omega = kspace * omega.tensor().to(torch.float64)
            clean = sm.unrolled_forward(y_omega, sl.coils, omega, params,
                                        TINY)
            p = samples.perturbations[0]
            y_pert = y_omega + enc_forward(p.image, sl.coils.maps, omega)
            pert = sm.unrolled_forward(y_pert, sl.coils, omega, params, TINY)
            if detach_perturbed:
                pert = pert.detach()
            return weighted_l1(pert - clean, p.image, levels=1)

        params.requires_grad_(True)
        g_full = torch.autograd.grad(spic_term(False), params.tensors(),
                                     allow_unused=True)
        g_ablate = torch.autograd.grad(spic_term(True), params.tensors(),
                                       allow_unused=True)
        params.requires_grad_(False)
        diffs = [
            (a - b).abs().max().item()
            for a, b in zip(g_full, g_ablate)
            if a is not None and b is not None
        ]
        assert max(diffs) > 1e-9

    def test_nonfinite_gradient_aborts(self):
        sl, omega = tiny_problem()
        params = init_params(TINY, seed=0)
        params.head = params.head * float("nan")
        loss_cfg = LossConfig(method="supervised")
        with pytest.raises(FloatingPointError):
            sm.loss_gradient([(sl, omega)], loss_cfg, params, TINY, seed=0)
