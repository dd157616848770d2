import numpy as np
import pytest

from csiloc import autodiff as ad
from csiloc.channel import generate_sample
from csiloc.errors import ConfigError
from csiloc.feature import (SppConfig, conv_stack, extract, extract_batch,
                            init_extractor_params, spp, _pyramid_spans)
from csiloc.params import ParamSet
from csiloc.preprocess import sample_to_image
from csiloc.scenario import ApConfig, ScenarioConfig

SPP = SppConfig(levels=(1, 2, 4), channels=8)


def make_params(seed=0, cfg=SPP, feature_dim=64):
    return init_extractor_params(ParamSet(), "ex", np.random.default_rng(seed),
                                 cfg, feature_dim)


def image_for(n_tx, n_rx, bandwidth, seed=5):
    cfg = ScenarioConfig(room_extent=(8.0, 9.0),
                         aps=[ApConfig(position=(1.0, 1.0), n_tx=n_tx,
                                       bandwidth_mhz=bandwidth)],
                         rp_spacing=2.0, n_rx=n_rx, paths_per_link=3,
                         noise_std=0.05, seed=seed)
    return sample_to_image(generate_sample(cfg, 0, 3, 0))


class TestConvStack:
    @pytest.mark.parametrize("n,z", [(16, 8), (32, 16), (12, 6), (23, 11)])
    def test_one_halving(self, n, z):
        params = make_params()
        pixels = np.random.default_rng(1).random((n, n, 3))
        fmap = conv_stack(None, params, "ex", pixels, "inner")
        assert fmap.value.shape == (8, z, z)

    def test_zero_image_finite_after_bn(self):
        params = make_params()
        fmap = conv_stack(None, params, "ex", np.zeros((16, 16, 3)), "inner")
        assert np.all(np.isfinite(fmap.value))

    def test_too_small_rejected(self):
        with pytest.raises(ConfigError):
            conv_stack(None, make_params(), "ex", np.zeros((3, 3, 3)), "inner")


class TestSpp:
    def test_output_length_independent_of_input_size(self):
        rng = np.random.default_rng(2)
        expected = 8 * (1 + 4 + 16)
        for z in (4, 5, 8, 11, 16):
            out = spp(None, ad.constant(rng.normal(size=(8, z, z))), SPP)
            assert out.value.shape == (expected,)

    def test_level_one_is_global_max(self):
        rng = np.random.default_rng(3)
        fmap = rng.normal(size=(8, 9, 9))
        out = spp(None, ad.constant(fmap), SPP)
        assert np.array_equal(out.value[:8], fmap.max(axis=(1, 2)))

    def test_spans_cover_every_pixel(self):
        for z in range(4, 33):
            for level in (1, 2, 4):
                spans = _pyramid_spans(z, level)
                covered = np.zeros(z, dtype=bool)
                for a, b in spans:
                    covered[a:b] = True
                assert covered.all(), (z, level)
                assert len(spans) == level

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(4)
        fmap = rng.normal(size=(8, 10, 10))
        a = 2.31
        y1 = spp(None, ad.constant(a * fmap), SPP).value
        y2 = a * spp(None, ad.constant(fmap), SPP).value
        assert np.max(np.abs(y1 - y2)) < 1e-12 * max(1.0, np.abs(y2).max())

    def test_average_pool_variant(self):
        cfg = SppConfig(levels=(1, 2), channels=2, pool="avg")
        fmap = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
        out = spp(None, ad.constant(fmap), cfg)
        assert out.value[0] == pytest.approx(fmap[0].mean())

    def test_map_smaller_than_level_rejected(self):
        with pytest.raises(ConfigError):
            spp(None, ad.constant(np.zeros((8, 3, 3))), SPP)

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            SppConfig(levels=(4, 2, 1))
        with pytest.raises(ConfigError):
            SppConfig(levels=())
        with pytest.raises(ConfigError):
            SppConfig(pool="median")


class TestExtract:
    def test_dimension_consistency_across_devices(self):
        params = make_params()
        lengths = set()
        for n_tx, n_rx in ((1, 1), (1, 2), (2, 1), (2, 2)):
            for bw in (20, 40, 80):
                img = image_for(n_tx, n_rx, bw)
                out = extract(None, params, "ex", img, SPP, "eval")
                lengths.add(out.value.shape)
        assert lengths == {(64,)}

    def test_identical_images_identical_features(self):
        params = make_params()
        img = image_for(2, 2, 20)
        a = extract(None, params, "ex", img, SPP, "eval").value
        b = extract(None, params, "ex", img, SPP, "eval").value
        assert np.array_equal(a, b)

    def test_batch_matches_single(self):
        params = make_params()
        imgs = [image_for(2, 2, 20, seed=s) for s in (5, 6, 7)]
        batched = extract_batch(None, params, "ex", imgs, SPP, "inner").value
        for i, img in enumerate(imgs):
            single = extract(None, params, "ex", img, SPP, "inner").value
            assert np.allclose(batched[i], single, atol=1e-12)

    def test_gradient_matches_finite_differences(self, fd_check):
        params = make_params(seed=1, cfg=SppConfig(levels=(1, 2), channels=3),
                             feature_dim=8)
        img = image_for(1, 2, 20)
        cfg = SppConfig(levels=(1, 2), channels=3)

        def loss_fn():
            tape = ad.Tape()
            vec = extract(tape, params, "ex", img, cfg, "inner")
            return tape, ad.mse_loss(tape, vec, np.zeros(8))

        fd_check(loss_fn, params, np.random.default_rng(0), picks=3)
