"""Synthetic multipath CSI generation.

The frequency response between one AP and the UE at subcarrier k is the
L-path sum

    H_k = sum_l  alpha_l * exp(-j * 2*pi * d_l / lambda_k) * a_rx(aod_l) a_tx(aoa_l)^H

with uniform-linear-array steering vectors evaluated at the center wavelength
and per-subcarrier wavelengths lambda_k in the propagation term. Hardware
impairments are injected on top: a phase ramp exp(-j (cfo_slope*k + sto_offset))
common to all antenna pairs, and additive complex Gaussian noise.

Generation is deterministic given (seed, ap, rp, sample counter): every sample
draws from its own counter-derived RNG substream, so datasets are bit-identical
regardless of generation order or parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .scenario import PathComponent, ScenarioConfig, wrap_angle

SPEED_OF_LIGHT = 299_792_458.0


def subcarrier_count(bandwidth_mhz):
    """Subcarriers per bandwidth: 64 per 20 MHz (desk-scale tone plan)."""
    if bandwidth_mhz not in (20, 40, 80):
        raise ConfigError(f"unsupported bandwidth {bandwidth_mhz} MHz")
    return 64 * (bandwidth_mhz // 20)


def subcarrier_wavelengths(center_freq_hz, bandwidth_mhz):
    """Wavelength of each subcarrier, centered tone layout, shape [K]."""
    k = subcarrier_count(bandwidth_mhz)
    spacing = bandwidth_mhz * 1e6 / k
    freqs = center_freq_hz + (np.arange(k) - (k - 1) / 2.0) * spacing
    return SPEED_OF_LIGHT / freqs


def steering_vector(angle, n_ant, spacing, wavelength):
    """Uniform linear array response; element m = exp(-j*2pi*m*spacing*sin(angle)/wavelength)."""
    if n_ant < 1:
        raise ConfigError(f"steering_vector: n_ant must be >= 1, got {n_ant}")
    if wavelength <= 0:
        raise ConfigError("steering_vector: wavelength must be > 0")
    m = np.arange(n_ant)
    return np.exp(-1j * 2.0 * np.pi * m * spacing * math.sin(angle) / wavelength)


def substream(seed, *key):
    """Counter-derived RNG substream; independent per key, reproducible per seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class CsiSample:
    """One measured CSI tensor for an (AP, RP, time) triple."""

    ap_index: int
    rp_index: int
    true_location: np.ndarray        # [2], meters
    csi: np.ndarray                  # complex128 [n_rx, n_tx, K]
    bandwidth_mhz: int

    def validate(self, cfg=None):
        if self.csi.ndim != 3:
            raise DataError(f"CSI tensor must be 3-D, got shape {self.csi.shape}")
        if self.csi.shape[2] != subcarrier_count(self.bandwidth_mhz):
            raise DataError(
                f"CSI has {self.csi.shape[2]} subcarriers, expected "
                f"{subcarrier_count(self.bandwidth_mhz)} for {self.bandwidth_mhz} MHz")
        if not np.all(np.isfinite(self.csi.view(np.float64))):
            raise DataError("CSI tensor contains non-finite entries")
        if cfg is not None:
            ap = cfg.aps[self.ap_index]
            expect = (cfg.n_rx, ap.n_tx, subcarrier_count(ap.bandwidth_mhz))
            if self.csi.shape != expect:
                raise DataError(f"CSI shape {self.csi.shape} does not match config {expect}")
        return self


def sample_paths(cfg, ap_index, rp_index, rng):
    """Draw the multipath profile for one (AP, RP) link.

    Path 1 is the geometric LoS path when the link has line of sight
    (length = AP-RP distance including the AP/UE height offset,
    attenuation = ref/length, bearing angles). Remaining paths get
    exponential excess lengths, uniform angles, and 1/length attenuation
    with log-normal jitter.
    """
    ap = cfg.aps[ap_index]
    rp = cfg.rp_grid()[rp_index]
    vec = rp - np.asarray(ap.position)
    dz = cfg.ap_height - cfg.ue_height
    dist = math.sqrt(float(vec @ vec) + dz * dz)
    if dist <= 0.0:
        raise ConfigError(f"RP {rp_index} coincides with AP {ap_index}")
    obstructed = rp_index in cfg.obstructed_rps()
    has_los = cfg.los_present and not obstructed
    jitter = cfg.attenuation_jitter + (cfg.obstruction_extra_jitter if obstructed else 0.0)

    paths = []
    if has_los:
        aod = wrap_angle(math.atan2(vec[1], vec[0]))
        aoa = wrap_angle(math.atan2(-vec[1], -vec[0]))
        paths.append(PathComponent(attenuation=cfg.attenuation_ref / dist,
                                   length=dist, aod=aod, aoa=aoa))
    while len(paths) < cfg.paths_per_link:
        excess = rng.exponential(cfg.nlos_excess_mean)
        length = dist + excess
        atten = cfg.attenuation_ref / length
        if jitter > 0:
            atten *= math.exp(rng.normal(0.0, jitter))
        paths.append(PathComponent(
            attenuation=atten,
            length=length,
            aod=wrap_angle(rng.uniform(-math.pi, math.pi)),
            aoa=wrap_angle(rng.uniform(-math.pi, math.pi)),
        ))
    return paths


def generate_csi(cfg, ap_index, rp_index, paths, rng):
    """Evaluate the multipath sum and inject impairments for one sample."""
    if not paths:
        raise DataError("generate_csi: empty path list")
    ap = cfg.aps[ap_index]
    rp = cfg.rp_grid()[rp_index]
    k = subcarrier_count(ap.bandwidth_mhz)
    lambdas = subcarrier_wavelengths(cfg.center_freq_hz, ap.bandwidth_mhz)
    lambda_c = SPEED_OF_LIGHT / cfg.center_freq_hz

    csi = np.zeros((cfg.n_rx, ap.n_tx, k), dtype=np.complex128)
    for p in paths:
        a_rx = steering_vector(p.aod, cfg.n_rx, cfg.rx_antenna_spacing, lambda_c)
        a_tx = steering_vector(p.aoa, ap.n_tx, ap.antenna_spacing, lambda_c)
        gain = p.attenuation * np.exp(-1j * 2.0 * np.pi * p.length / lambdas)   # [K]
        csi += np.einsum("r,t,k->rtk", a_rx, np.conj(a_tx), gain)

    slope, offset = cfg.phase_error
    if slope != 0.0 or offset != 0.0:
        csi *= np.exp(-1j * (slope * np.arange(k) + offset))
    if cfg.noise_std > 0.0:
        scale = cfg.noise_std / math.sqrt(2.0)
        csi = csi + scale * (rng.standard_normal(csi.shape)
                             + 1j * rng.standard_normal(csi.shape))

    return CsiSample(ap_index=ap_index, rp_index=rp_index,
                     true_location=np.asarray(rp, dtype=np.float64),
                     csi=csi, bandwidth_mhz=ap.bandwidth_mhz).validate(cfg)


@dataclass
class CsiDataset:
    """All samples generated for one scenario, plus provenance.

    counter_offset records which per-sample substreams were drawn; disjoint
    offsets give statistically fresh splits of the same physical scenario.
    """

    config: ScenarioConfig
    samples_per_rp: int
    samples: list            # ordered (rp, ap, sample_counter)
    counter_offset: int = 0

    @property
    def n_rps(self):
        return self.config.rp_grid().shape[0]

    def sample_at(self, rp_index, ap_index, counter):
        n_aps = self.config.n_aps
        idx = (rp_index * n_aps + ap_index) * self.samples_per_rp + counter
        return self.samples[idx]

    def graph_groups(self):
        """Yield (rp_index, counter, per-AP sample list) co-timed across APs."""
        for rp in range(self.n_rps):
            for c in range(self.samples_per_rp):
                yield rp, c, [self.sample_at(rp, ap, c) for ap in range(self.config.n_aps)]


_PATH_TAG = 0x5054


def link_paths(cfg, ap_index, rp_index):
    """The static multipath geometry of one link, fixed per scenario seed."""
    return sample_paths(cfg, ap_index, rp_index,
                        substream(cfg.seed, _PATH_TAG, ap_index, rp_index))


def perturb_paths(cfg, paths, rp_index, rng):
    """Per-sample small-scale variation on top of the static link geometry.

    Path lengths wobble by sample_length_jitter (fraction-of-wavelength to
    centimeter scale); obstructed RPs additionally see per-sample log-normal
    attenuation jitter, standing in for passersby.
    """
    extra = cfg.obstruction_extra_jitter if rp_index in cfg.obstructed_rps() else 0.0
    if cfg.sample_length_jitter == 0.0 and extra == 0.0:
        return paths
    out = []
    for p in paths:
        length = p.length
        if cfg.sample_length_jitter > 0.0:
            length = max(length + rng.normal(0.0, cfg.sample_length_jitter), 1e-3)
        atten = p.attenuation
        if extra > 0.0:
            atten *= math.exp(rng.normal(0.0, extra))
        out.append(PathComponent(attenuation=atten, length=length, aod=p.aod, aoa=p.aoa))
    return out


def generate_sample(cfg, ap_index, rp_index, counter):
    """One deterministic sample from its own (ap, rp, counter) substream.

    The link geometry is shared by all samples of an (AP, RP) pair so every
    reference point has a stable fingerprint; the per-sample stream drives
    only small-scale variation and measurement noise.
    """
    rng = substream(cfg.seed, ap_index, rp_index, counter)
    paths = perturb_paths(cfg, link_paths(cfg, ap_index, rp_index), rp_index, rng)
    return generate_csi(cfg, ap_index, rp_index, paths, rng)


def generate_dataset(cfg, samples_per_rp, counter_offset=0):
    """samples_per_rp CsiSamples for every (RP, AP) pair on the grid."""
    if samples_per_rp < 1:
        raise ConfigError(f"samples_per_rp must be >= 1, got {samples_per_rp}")
    n_rps = cfg.rp_grid().shape[0]
    samples = []
    for rp in range(n_rps):
        for ap in range(cfg.n_aps):
            for c in range(samples_per_rp):
                samples.append(generate_sample(cfg, ap, rp, counter_offset + c))
    return CsiDataset(config=cfg, samples_per_rp=samples_per_rp, samples=samples,
                      counter_offset=counter_offset)
