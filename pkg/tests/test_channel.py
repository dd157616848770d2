import math

import numpy as np
import pytest

from csiloc.channel import (CsiSample, generate_csi, generate_dataset, generate_sample,
                            link_paths, sample_paths, steering_vector, subcarrier_count,
                            subcarrier_wavelengths, substream, SPEED_OF_LIGHT)
from csiloc.errors import ConfigError, DataError
from csiloc.scenario import ApConfig, PathComponent, ScenarioConfig


def small_cfg(**overrides):
    base = dict(room_extent=(8.0, 9.0),
                aps=[ApConfig(position=(1.0, 1.0), n_tx=2, bandwidth_mhz=20)],
                rp_spacing=2.0, n_rx=2, paths_per_link=3, noise_std=0.0, seed=7)
    base.update(overrides)
    return ScenarioConfig(**base)


class TestSubcarrierCount:
    @pytest.mark.parametrize("bw,k", [(20, 64), (40, 128), (80, 256)])
    def test_counts(self, bw, k):
        assert subcarrier_count(bw) == k

    def test_rejects_unknown_bandwidth(self):
        with pytest.raises(ConfigError):
            subcarrier_count(160)


class TestSteeringVector:
    def test_broadside_is_all_ones(self):
        a = steering_vector(0.0, 4, 0.03, 0.057)
        assert np.allclose(a, np.ones(4))

    def test_single_antenna(self):
        assert np.allclose(steering_vector(1.2, 1, 0.03, 0.057), [1.0])

    def test_half_wavelength_at_30_degrees(self):
        lam = 0.06
        a = steering_vector(math.pi / 6, 2, lam / 2, lam)
        # sin(pi/6) = 1/2 -> second element exp(-j*pi/2)
        assert np.allclose(a, [1.0, np.exp(-1j * math.pi / 2)], atol=1e-12)

    def test_unit_modulus(self):
        a = steering_vector(0.7, 5, 0.031, 0.05)
        assert np.allclose(np.abs(a), 1.0)


class TestGenerateCsi:
    def test_single_unit_path_has_unit_modulus(self):
        cfg = small_cfg(aps=[ApConfig(position=(1, 1), n_tx=1)], n_rx=1)
        paths = [PathComponent(attenuation=1.0, length=3.0, aod=0.4, aoa=-0.3)]
        s = generate_csi(cfg, 0, 2, paths, substream(7, 0, 2, 0))
        assert np.allclose(np.abs(s.csi), 1.0)

    def test_half_wavelength_destructive_interference(self):
        cfg = small_cfg(aps=[ApConfig(position=(1, 1), n_tx=1)], n_rx=1)
        lam = subcarrier_wavelengths(cfg.center_freq_hz, 20)
        k0 = 17
        paths = [PathComponent(1.0, 3.0, 0.0, 0.0),
                 PathComponent(1.0, 3.0 + lam[k0] / 2, 0.0, 0.0)]
        s = generate_csi(cfg, 0, 2, paths, substream(7, 0, 2, 0))
        assert abs(s.csi[0, 0, k0]) < 1e-12

    def test_matches_brute_force_path_sum(self):
        # independent scalar-loop evaluation of the multipath sum
        cfg = small_cfg()
        paths = link_paths(cfg, 0, 5)
        s = generate_csi(cfg, 0, 5, paths, substream(7, 0, 5, 0))
        k = subcarrier_count(20)
        lam_k = SPEED_OF_LIGHT / (cfg.center_freq_hz
                                  + (np.arange(k) - (k - 1) / 2) * (20e6 / k))
        lam_c = SPEED_OF_LIGHT / cfg.center_freq_hz
        ap = cfg.aps[0]
        expect = np.zeros((cfg.n_rx, ap.n_tx, k), dtype=complex)
        for p in paths:
            for r in range(cfg.n_rx):
                for t in range(ap.n_tx):
                    a_r = np.exp(-1j * 2 * np.pi * r * cfg.rx_antenna_spacing
                                 * math.sin(p.aod) / lam_c)
                    a_t = np.exp(-1j * 2 * np.pi * t * ap.antenna_spacing
                                 * math.sin(p.aoa) / lam_c)
                    for kk in range(k):
                        expect[r, t, kk] += (p.attenuation
                                             * np.exp(-1j * 2 * np.pi * p.length / lam_k[kk])
                                             * a_r * np.conj(a_t))
        rel = np.abs(s.csi - expect) / np.abs(expect)
        assert rel.max() < 1e-12

    def test_empty_paths_rejected(self):
        cfg = small_cfg()
        with pytest.raises(DataError):
            generate_csi(cfg, 0, 0, [], substream(7, 0, 0, 0))

    def test_phase_error_is_linear_in_subcarrier_for_every_antenna_pair(self):
        clean_cfg = small_cfg()
        err_cfg = small_cfg(phase_error=(0.37, 1.21))
        clean = generate_sample(clean_cfg, 0, 3, 0)
        errored = generate_sample(err_cfg, 0, 3, 0)
        k = np.arange(subcarrier_count(20))
        expected = np.exp(-1j * (0.37 * k + 1.21))
        ratio = errored.csi / clean.csi
        for r in range(clean_cfg.n_rx):
            for t in range(2):
                assert np.allclose(ratio[r, t], expected, atol=1e-10)


class TestSamplePaths:
    def test_los_length_is_ap_rp_distance(self):
        cfg = small_cfg()
        rp = cfg.rp_grid()[4]
        paths = sample_paths(cfg, 0, 4, substream(7, 9, 9))
        planar = np.linalg.norm(rp - np.asarray(cfg.aps[0].position))
        expected = math.hypot(planar, cfg.ap_height - cfg.ue_height)
        assert paths[0].length == pytest.approx(expected, abs=1e-12)

    def test_single_path_when_los_only(self):
        cfg = small_cfg(paths_per_link=1)
        assert len(sample_paths(cfg, 0, 3, substream(7, 1, 1))) == 1

    def test_nlos_lengths_not_shorter_than_los(self):
        cfg = small_cfg(paths_per_link=6)
        paths = sample_paths(cfg, 0, 3, substream(7, 2, 2))
        assert all(p.length >= paths[0].length for p in paths)

    def test_excess_length_statistics(self):
        # 10^4 NLoS draws: sample mean of the excess within 5% of the config
        cfg = small_cfg(paths_per_link=2, nlos_excess_mean=4.0, attenuation_jitter=0.0)
        rng = substream(7, 3, 3)
        excesses = []
        for _ in range(10_000):
            paths = sample_paths(cfg, 0, 3, rng)
            excesses.append(paths[1].length - paths[0].length)
        assert np.mean(excesses) == pytest.approx(4.0, rel=0.05)

    def test_obstructed_rps_lose_los(self):
        cfg = small_cfg(obstructed_rp_fraction=0.5, paths_per_link=2)
        blocked = cfg.obstructed_rps()
        assert blocked
        rp = next(iter(blocked))
        paths = sample_paths(cfg, 0, rp, substream(7, 4, 4))
        planar = np.linalg.norm(cfg.rp_grid()[rp] - np.asarray(cfg.aps[0].position))
        los = math.hypot(planar, cfg.ap_height - cfg.ue_height)
        assert all(p.length > los for p in paths)


class TestGenerateDataset:
    def test_rp_grid_count_for_half_meter_spacing(self):
        cfg = small_cfg(rp_spacing=0.5)
        assert cfg.rp_grid().shape == (17 * 19, 2)

    def test_total_record_count(self):
        cfg = small_cfg(aps=[ApConfig(position=(1, 1)), ApConfig(position=(5, 5))],
                        rp_spacing=4.0)
        ds = generate_dataset(cfg, samples_per_rp=3)
        assert len(ds.samples) == ds.n_rps * 2 * 3

    def test_bit_identical_regeneration(self):
        cfg = small_cfg(rp_spacing=4.0, noise_std=0.1)
        a = generate_dataset(cfg, 2)
        b = generate_dataset(cfg, 2)
        assert all(np.array_equal(x.csi, y.csi) for x, y in zip(a.samples, b.samples))

    def test_counter_offset_gives_fresh_noise_same_geometry(self):
        cfg = small_cfg(rp_spacing=4.0, noise_std=0.1)
        a = generate_dataset(cfg, 1)
        b = generate_dataset(cfg, 1, counter_offset=1000)
        same = [np.array_equal(x.csi, y.csi) for x, y in zip(a.samples, b.samples)]
        assert not any(same)
        # noiseless, jitter-free: identical geometry means identical CSI
        cfg0 = small_cfg(rp_spacing=4.0, noise_std=0.0, sample_length_jitter=0.0)
        a0 = generate_dataset(cfg0, 1)
        b0 = generate_dataset(cfg0, 1, counter_offset=1000)
        assert all(np.array_equal(x.csi, y.csi) for x, y in zip(a0.samples, b0.samples))

    def test_sample_shapes_match_config(self):
        cfg = small_cfg(aps=[ApConfig(position=(1, 1), n_tx=1, bandwidth_mhz=40),
                             ApConfig(position=(5, 5), n_tx=2, bandwidth_mhz=80)],
                        rp_spacing=4.0)
        ds = generate_dataset(cfg, 1)
        for s in ds.samples:
            s.validate(cfg)

    def test_rejects_nonpositive_budget(self):
        with pytest.raises(ConfigError):
            generate_dataset(small_cfg(rp_spacing=4.0), 0)


class TestScenarioConfig:
    def test_ap_outside_room_rejected(self):
        with pytest.raises(ConfigError):
            small_cfg(aps=[ApConfig(position=(9.5, 1.0))])

    def test_unknown_keys_rejected(self):
        d = small_cfg().to_dict()
        d["mystery"] = 1
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(d)

    def test_json_roundtrip_preserves_digest(self, tmp_path):
        cfg = small_cfg(noise_std=0.25)
        path = tmp_path / "scen.json"
        cfg.save(path)
        again = ScenarioConfig.load(path)
        assert again.digest() == cfg.digest()

    def test_bad_bandwidth_rejected(self):
        with pytest.raises(ConfigError):
            ApConfig(position=(1, 1), bandwidth_mhz=30)
