import numpy as np
import pytest

from csiloc.channel import generate_sample, subcarrier_count
from csiloc.errors import DataError
from csiloc.preprocess import (build_image, clean_sample, denoise_amplitude,
                               image_size, sanitize_phase, sample_to_image,
                               write_pgm, write_ppm)
from csiloc.scenario import ApConfig, ScenarioConfig


def cfg_for(n_tx=2, n_rx=2, bandwidth=20, **overrides):
    base = dict(room_extent=(8.0, 9.0),
                aps=[ApConfig(position=(1.0, 1.0), n_tx=n_tx, bandwidth_mhz=bandwidth)],
                rp_spacing=2.0, n_rx=n_rx, paths_per_link=3, noise_std=0.0, seed=11)
    base.update(overrides)
    return ScenarioConfig(**base)


def smooth_amplitude(n=128):
    k = np.arange(n)
    return 2.0 + np.abs(np.cos(2 * np.pi * k / n) + 0.5 * np.sin(6 * np.pi * k / n))


class TestDenoiseAmplitude:
    def test_constant_vector_unchanged(self):
        out = denoise_amplitude(np.full(64, 3.3))
        assert np.allclose(out, 3.3, atol=1e-12)

    def test_zeros_unchanged(self):
        assert np.array_equal(denoise_amplitude(np.zeros(64)), np.zeros(64))

    def test_reduces_mse_on_noisy_smooth_signal(self):
        clean = smooth_amplitude()
        for seed in range(100):
            rng = np.random.default_rng(seed)
            noisy = np.maximum(clean + rng.normal(0, 0.1, clean.size), 0.0)
            out = denoise_amplitude(noisy)
            assert np.mean((out - clean) ** 2) < np.mean((noisy - clean) ** 2)

    def test_preserves_length_and_nonnegativity(self):
        rng = np.random.default_rng(0)
        amp = np.abs(rng.normal(0.05, 0.2, 100))
        out = denoise_amplitude(amp)
        assert out.shape == amp.shape
        assert np.all(out >= 0)

    def test_rejects_bad_input(self):
        with pytest.raises(DataError):
            denoise_amplitude(np.array([1.0, 2.0]))
        with pytest.raises(DataError):
            denoise_amplitude(np.array([1.0, np.nan, 2.0, 3.0]))
        with pytest.raises(DataError):
            denoise_amplitude(np.array([1.0, -0.5, 2.0, 3.0]))


class TestSanitizePhase:
    def test_pure_linear_phase_vanishes(self):
        k = np.arange(64)
        out = sanitize_phase(0.31 * k + 0.7)
        assert np.max(np.abs(out)) < 1e-9

    def test_constant_phase_vanishes(self):
        out = sanitize_phase(np.full(64, 1.234))
        assert np.max(np.abs(out)) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        phase = np.cumsum(rng.normal(0, 0.15, 64))
        once = sanitize_phase(phase)
        twice = sanitize_phase(once)
        assert np.max(np.abs(once - twice)) < 1e-9

    def test_removes_injected_cfo_sto_exactly(self):
        # derived oracle: sanitizing the errored phase equals sanitizing the
        # clean phase, because the injected term is linear in k
        clean_cfg = cfg_for(paths_per_link=3)
        err_cfg = cfg_for(paths_per_link=3, phase_error=(0.9, -2.2))
        clean = generate_sample(clean_cfg, 0, 4, 0)
        errored = generate_sample(err_cfg, 0, 4, 0)
        for r in range(2):
            for t in range(2):
                a = sanitize_phase(np.angle(clean.csi[r, t]))
                b = sanitize_phase(np.angle(errored.csi[r, t]))
                assert np.max(np.abs(a - b)) < 1e-9

    def test_rejects_short_input(self):
        with pytest.raises(DataError):
            sanitize_phase(np.array([0.3]))


class TestBuildImage:
    def test_perfect_square_no_padding(self):
        assert image_size(2, 2, 64) == 16
        assert 16 * 16 - 2 * 2 * 64 == 0

    def test_padding_count(self):
        assert image_size(1, 2, 64) == 12
        assert 12 * 12 - 1 * 2 * 64 == 16

    @pytest.mark.parametrize("n_tx,n_rx,bw", [(2, 2, 20), (1, 2, 20), (2, 1, 40)])
    def test_flip_channel_and_range(self, n_tx, n_rx, bw):
        s = generate_sample(cfg_for(n_tx=n_tx, n_rx=n_rx, bandwidth=bw), 0, 3, 0)
        img = build_image(clean_sample(s))
        assert img.n_img == image_size(n_tx, n_rx, subcarrier_count(bw))
        assert np.array_equal(img.pixels[:, :, 1], np.flipud(img.pixels[:, :, 0]))
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0

    def test_flatten_order_tx_major_then_rx_then_subcarrier(self):
        # distinct increasing amplitudes in (tx, rx, k) order must appear in
        # that order along the row-major unpadded prefix of the R channel
        n_rx, n_tx, k = 2, 2, 64
        codes = np.arange(1.0, 1.0 + n_tx * n_rx * k)
        csi = np.empty((n_rx, n_tx, k), dtype=complex)
        for t in range(n_tx):
            for r in range(n_rx):
                for kk in range(k):
                    csi[r, t, kk] = codes[(t * n_rx + r) * k + kk]
        s = type(generate_sample(cfg_for(), 0, 0, 0))(
            ap_index=0, rp_index=0, true_location=np.zeros(2), csi=csi, bandwidth_mhz=20)
        img = build_image(s)
        prefix = img.pixels[:, :, 0].ravel()[:codes.size]
        expected = (codes - codes.min()) / (codes.max() - codes.min())
        assert np.array_equal(prefix, expected)

    def test_constant_planes_map_to_half(self):
        csi = np.full((1, 1, 64), 2.0 + 0.0j)
        s = type(generate_sample(cfg_for(), 0, 0, 0))(
            ap_index=0, rp_index=0, true_location=np.zeros(2), csi=csi, bandwidth_mhz=20)
        img = build_image(s)
        prefix = img.pixels[:, :, 0].ravel()[:64]
        assert np.all(prefix == 0.5)

    def test_empty_tensor_rejected(self):
        s = type(generate_sample(cfg_for(), 0, 0, 0))(
            ap_index=0, rp_index=0, true_location=np.zeros(2),
            csi=np.empty((1, 1, 0), dtype=complex), bandwidth_mhz=20)
        with pytest.raises(DataError):
            build_image(s)

    def test_deterministic(self):
        s = generate_sample(cfg_for(noise_std=0.05), 0, 3, 0)
        a = sample_to_image(s)
        b = sample_to_image(s)
        assert np.array_equal(a.pixels, b.pixels)


class TestImageDump:
    def test_ppm_and_pgm_headers(self, tmp_path):
        s = generate_sample(cfg_for(), 0, 2, 0)
        img = sample_to_image(s)
        ppm = tmp_path / "img.ppm"
        pgm = tmp_path / "img.pgm"
        write_ppm(img, ppm)
        write_pgm(img.pixels[:, :, 0], pgm)
        assert ppm.read_bytes().startswith(b"P6\n16 16\n255\n")
        assert pgm.read_bytes().startswith(b"P5\n16 16\n255\n")
        assert len(ppm.read_bytes()) == len(b"P6\n16 16\n255\n") + 16 * 16 * 3
