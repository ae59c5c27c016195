"""
Pruebas del denoiser: forma, inicialización, retropropagación y serialización
"""
import numpy as np
import pytest

from app.core.exceptions import CacheMismatch, CorruptCheckpoint, ShapeMismatch
from app.models.denoiser import DenoiserConfig
from app.services.denoiser_service import DenoiserModel, DenoiserParams, DenoiserService


def random_inputs(rng, cfg, batch=None, size=6):
    lead = () if batch is None else (batch,)
    x_t = rng.standard_normal(lead + (cfg.image_channels, size, size))
    cond = rng.standard_normal(lead + (cfg.image_channels + 1, size, size))
    t = 17 if batch is None else rng.integers(0, 200, size=batch)
    return x_t, t, cond


class TestConfig:
    def test_parameter_count_is_pure_function_of_config(self):
        cfg = DenoiserConfig(hidden_width=8, time_embed_dim=4)
        # (3->8), (8->8), (8->1) con kernels 3x3, bias y proyección temporal
        expected = (8 * 3 * 9 + 8 + 8 * 4) + (8 * 8 * 9 + 8 + 8 * 4) + (1 * 8 * 9 + 1 + 1 * 4)
        assert cfg.parameter_count() == expected
        assert len(DenoiserParams(cfg)) == expected

    def test_fixed_architecture(self):
        with pytest.raises(ValueError):
            DenoiserConfig(n_layers=4)
        with pytest.raises(ValueError):
            DenoiserConfig(hidden_width=2)
        with pytest.raises(ValueError):
            DenoiserConfig(time_embed_dim=7)


class TestInit:
    def test_deterministic(self, tiny_denoiser_cfg):
        a = DenoiserService.init_params(tiny_denoiser_cfg, np.random.default_rng(5))
        b = DenoiserService.init_params(tiny_denoiser_cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(a.flat, b.flat)

    def test_biases_and_time_projections_zero(self, tiny_denoiser_cfg, rng):
        for capa in DenoiserService.init_params(tiny_denoiser_cfg, rng).layers:
            assert not capa.bias.any()
            assert not capa.time_proj.any()

    def test_kernel_std_matches_he(self):
        cfg = DenoiserConfig()
        muestras = np.concatenate([
            DenoiserService.init_params(cfg, np.random.default_rng(s)).layers[1].kernel.ravel() for s in range(2)
        ])
        assert muestras.size >= 10**4
        esperado = np.sqrt(2.0 / (cfg.hidden_width * 9))
        assert abs(muestras.std() / esperado - 1.0) < 0.05


class TestForward:
    def test_output_shape(self, rng):
        for channels, size in ((1, 5), (3, 9)):
            cfg = DenoiserConfig(image_channels=channels, hidden_width=4, time_embed_dim=4)
            params = DenoiserService.init_params(cfg, rng)
            x_t, t, cond = random_inputs(rng, cfg, size=size)
            assert DenoiserService.forward(params, x_t, t, cond)[0].shape == x_t.shape
            xb, tb, cb = random_inputs(rng, cfg, batch=3, size=size)
            assert DenoiserService.forward(params, xb, tb, cb)[0].shape == xb.shape

    def test_zero_params_give_zero_output(self, tiny_denoiser_cfg, rng):
        x_t, t, cond = random_inputs(rng, tiny_denoiser_cfg)
        out, _ = DenoiserService.forward(DenoiserParams(tiny_denoiser_cfg), x_t, t, cond)
        assert not out.any()

    def test_doubling_last_kernel_doubles_output(self, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        x_t, t, cond = random_inputs(rng, tiny_denoiser_cfg)
        out, _ = DenoiserService.forward(params, x_t, t, cond)
        doubled = params.copy()
        doubled.layers[-1].kernel[...] *= 2.0
        np.testing.assert_allclose(DenoiserService.forward(doubled, x_t, t, cond)[0], 2.0 * out, atol=1e-12, rtol=0)

    def test_batched_matches_single(self, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        xb, tb, cb = random_inputs(rng, tiny_denoiser_cfg, batch=2)
        out, _ = DenoiserService.forward(params, xb, tb, cb)
        single, _ = DenoiserService.forward(params, xb[1], int(tb[1]), cb[1])
        np.testing.assert_allclose(out[1], single, atol=1e-12)

    def test_channel_mismatch(self, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        with pytest.raises(ShapeMismatch):
            DenoiserService.forward(params, np.zeros((1, 6, 6)), 0, np.zeros((1, 6, 6)))
        with pytest.raises(ShapeMismatch):
            DenoiserService.forward(params, np.zeros((1, 6, 6)), 0, np.zeros((2, 6, 7)))

    def test_time_embedding(self):
        emb = DenoiserService.time_embedding(np.array([0.0, 3.0]), 16)
        assert emb.shape == (2, 16)
        np.testing.assert_array_equal(emb[0, :8], 0.0)
        np.testing.assert_array_equal(emb[0, 8:], 1.0)
        assert emb[1, 0] == pytest.approx(np.sin(3.0))
        assert emb[1, 7] == pytest.approx(np.sin(3.0 * 1e-4))

    def test_model_adapter(self, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        x_t, t, cond = random_inputs(rng, tiny_denoiser_cfg)
        esperado = DenoiserService.forward(params, x_t, t, cond)[0]
        np.testing.assert_array_equal(DenoiserModel(params)(x_t, t, cond), esperado)


class TestBackward:
    def test_zero_grad_out(self, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        x_t, t, cond = random_inputs(rng, tiny_denoiser_cfg)
        out, cache = DenoiserService.forward(params, x_t, t, cond)
        assert not DenoiserService.backward(params, cache, np.zeros_like(out)).flat.any()

    def test_linear_in_grad_out(self, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        x_t, t, cond = random_inputs(rng, tiny_denoiser_cfg, batch=2)
        out, cache = DenoiserService.forward(params, x_t, t, cond)
        g = rng.standard_normal(out.shape)
        np.testing.assert_allclose(
            DenoiserService.backward(params, cache, 2.0 * g).flat,
            2.0 * DenoiserService.backward(params, cache, g).flat,
            atol=1e-12, rtol=0,
        )

    def test_cache_mismatch(self, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        x_t, t, cond = random_inputs(rng, tiny_denoiser_cfg)
        out, cache = DenoiserService.forward(params, x_t, t, cond)
        otros = DenoiserService.init_params(DenoiserConfig(hidden_width=5, time_embed_dim=8), rng)
        with pytest.raises(CacheMismatch):
            DenoiserService.backward(otros, cache, out)
        with pytest.raises(CacheMismatch):
            DenoiserService.backward(params, cache, np.zeros((1, 6, 5)))


class TestGradCheck:
    def test_default_config_passes(self):
        report = DenoiserService.grad_check(DenoiserConfig(), seed=0)
        assert report.passed
        assert report.n_coordinates == 100
        assert report.max_relative_error < 1e-4

    def test_corrupted_backward_fails(self, tiny_denoiser_cfg):
        def corrupted(params, cache, grad_out):
            grads = DenoiserService.backward(params, cache, grad_out)
            grads.flat *= 1.1
            return grads

        assert not DenoiserService.grad_check(tiny_denoiser_cfg, seed=1, backward_fn=corrupted).passed

    def test_deterministic(self, tiny_denoiser_cfg):
        primero = DenoiserService.grad_check(tiny_denoiser_cfg, seed=4)
        assert primero == DenoiserService.grad_check(tiny_denoiser_cfg, seed=4)


class TestSerialization:
    def test_round_trip(self, tmp_path, tiny_denoiser_cfg, rng):
        params = DenoiserService.init_params(tiny_denoiser_cfg, rng)
        loaded = DenoiserService.load_params(DenoiserService.save_params(params, tmp_path / "p.bin"))
        assert loaded.config == params.config
        np.testing.assert_array_equal(loaded.flat, params.flat)

    def test_header_layout(self, tiny_denoiser_cfg, rng):
        raw = DenoiserService.params_to_bytes(DenoiserService.init_params(tiny_denoiser_cfg, rng))
        assert raw[:4] == b"MCR1"
        fields = np.frombuffer(raw[4:28], dtype="<i4")
        np.testing.assert_array_equal(fields, [1, 3, 4, 3, 3, 8])
        assert len(raw) == 28 + 8 * tiny_denoiser_cfg.parameter_count()

    def test_bad_magic_and_truncation(self, tmp_path, tiny_denoiser_cfg, rng):
        raw = DenoiserService.params_to_bytes(DenoiserService.init_params(tiny_denoiser_cfg, rng))
        (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(CorruptCheckpoint):
            DenoiserService.load_params(tmp_path / "bad.bin")
        (tmp_path / "short.bin").write_bytes(raw[:-3])
        with pytest.raises(CorruptCheckpoint):
            DenoiserService.load_params(tmp_path / "short.bin")
