"""Scenario descriptions: rooms, access points, reference-point grids.

A ScenarioConfig is the full generative description of one indoor scenario.
It round-trips through a strict JSON schema (unknown keys rejected) and has a
stable digest used for artifact provenance.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SUPPORTED_BANDWIDTHS = (20, 40, 80)


def wrap_angle(a):
    """Map an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class PathComponent:
    """One propagation path: attenuation, length (m), departure/arrival angles (rad)."""

    attenuation: float
    length: float
    aod: float
    aoa: float

    def __post_init__(self):
        if not (math.isfinite(self.attenuation) and self.attenuation >= 0.0):
            raise ConfigError(f"path attenuation must be finite and >= 0, got {self.attenuation}")
        if not (math.isfinite(self.length) and self.length > 0.0):
            raise ConfigError(f"path length must be > 0, got {self.length}")
        if not (-math.pi <= self.aod < math.pi) or not (-math.pi <= self.aoa < math.pi):
            raise ConfigError("aod/aoa must lie in [-pi, pi)")


@dataclass
class ApConfig:
    """One access point: position, transmit array, occupied bandwidth."""

    position: tuple[float, float]
    n_tx: int = 2
    bandwidth_mhz: int = 20
    antenna_spacing: float = 0.03

    def __post_init__(self):
        self.position = (float(self.position[0]), float(self.position[1]))
        if self.bandwidth_mhz not in SUPPORTED_BANDWIDTHS:
            raise ConfigError(
                f"bandwidth {self.bandwidth_mhz} MHz unsupported; expected one of "
                f"{SUPPORTED_BANDWIDTHS}")
        if self.n_tx < 1:
            raise ConfigError(f"n_tx must be >= 1, got {self.n_tx}")
        if self.antenna_spacing <= 0:
            raise ConfigError("antenna_spacing must be > 0")


@dataclass
class ScenarioConfig:
    """Generative description of one scenario.

    The multipath statistics the channel model leaves open (number of paths,
    excess-length scale, attenuation jitter) are explicit fields so runs can
    report them instead of hiding them in code.
    """

    room_extent: tuple[float, float]
    aps: list[ApConfig]
    rp_spacing: float
    n_rx: int = 2
    center_freq_hz: float = 5.25e9
    paths_per_link: int = 4
    los_present: bool = True
    noise_std: float = 0.0
    phase_error: tuple[float, float] = (0.0, 0.0)  # (cfo_slope, sto_offset)
    seed: int = 0
    ap_height: float = 1.8
    ue_height: float = 1.55
    rx_antenna_spacing: float = 0.06
    nlos_excess_mean: float = 3.0
    attenuation_ref: float = 1.0
    attenuation_jitter: float = 0.2
    sample_length_jitter: float = 0.002
    obstructed_rp_fraction: float = 0.0
    obstruction_extra_jitter: float = 0.5

    def __post_init__(self):
        self.room_extent = (float(self.room_extent[0]), float(self.room_extent[1]))
        self.phase_error = (float(self.phase_error[0]), float(self.phase_error[1]))
        self.aps = [ap if isinstance(ap, ApConfig) else ApConfig(**ap) for ap in self.aps]
        if not self.aps:
            raise ConfigError("scenario needs at least one AP")
        if self.rp_spacing <= 0:
            raise ConfigError(f"rp_spacing must be > 0, got {self.rp_spacing}")
        if self.n_rx < 1 or self.paths_per_link < 1:
            raise ConfigError("n_rx and paths_per_link must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not (0.0 <= self.obstructed_rp_fraction <= 1.0):
            raise ConfigError("obstructed_rp_fraction must be in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be an unsigned integer")
        w, h = self.room_extent
        if w <= 0 or h <= 0:
            raise ConfigError("room_extent must be positive")
        for i, ap in enumerate(self.aps):
            x, y = ap.position
            if not (0.0 <= x <= w and 0.0 <= y <= h):
                raise ConfigError(f"AP {i} position {ap.position} outside room {self.room_extent}")
        if self.rp_grid().shape[0] == 0:
            raise ConfigError("derived RP grid is empty")

    @property
    def n_aps(self):
        return len(self.aps)

    def rp_grid(self):
        """Reference points at multiples of rp_spacing, shape [n_rps, 2], row-major in x."""
        w, h = self.room_extent
        nx = int(math.floor(w / self.rp_spacing)) + 1
        ny = int(math.floor(h / self.rp_spacing)) + 1
        xs = np.arange(nx) * self.rp_spacing
        ys = np.arange(ny) * self.rp_spacing
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def obstructed_rps(self):
        """Deterministic RP subset that loses LoS and gains attenuation jitter."""
        n = self.rp_grid().shape[0]
        count = int(math.floor(self.obstructed_rp_fraction * n))
        if count == 0:
            return frozenset()
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(self.seed, spawn_key=(0xB10C,))))
        return frozenset(rng.choice(n, size=count, replace=False).tolist())

    # -- strict JSON schema

    def to_dict(self):
        return {
            "room_extent": list(self.room_extent),
            "aps": [{
                "position": list(ap.position),
                "n_tx": ap.n_tx,
                "bandwidth_mhz": ap.bandwidth_mhz,
                "antenna_spacing": ap.antenna_spacing,
            } for ap in self.aps],
            "rp_spacing": self.rp_spacing,
            "n_rx": self.n_rx,
            "center_freq_hz": self.center_freq_hz,
            "paths_per_link": self.paths_per_link,
            "los_present": self.los_present,
            "noise_std": self.noise_std,
            "phase_error": list(self.phase_error),
            "seed": self.seed,
            "ap_height": self.ap_height,
            "ue_height": self.ue_height,
            "rx_antenna_spacing": self.rx_antenna_spacing,
            "nlos_excess_mean": self.nlos_excess_mean,
            "attenuation_ref": self.attenuation_ref,
            "attenuation_jitter": self.attenuation_jitter,
            "sample_length_jitter": self.sample_length_jitter,
            "obstructed_rp_fraction": self.obstructed_rp_fraction,
            "obstruction_extra_jitter": self.obstruction_extra_jitter,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        ap_dicts = d.pop("aps", None)
        if ap_dicts is None:
            raise ConfigError("scenario config missing 'aps'")
        aps = []
        for i, ad in enumerate(ap_dicts):
            unknown = set(ad) - {"position", "n_tx", "bandwidth_mhz", "antenna_spacing"}
            if unknown:
                raise ConfigError(f"AP {i}: unknown keys {sorted(unknown)}")
            aps.append(ApConfig(**ad))
        known = {f for f in cls.__dataclass_fields__ if f != "aps"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"scenario config: unknown keys {sorted(unknown)}")
        missing = {"room_extent", "rp_spacing"} - set(d)
        if missing:
            raise ConfigError(f"scenario config: missing keys {sorted(missing)}")
        if "phase_error" in d:
            d["phase_error"] = tuple(d["phase_error"])
        d["room_extent"] = tuple(d["room_extent"])
        return cls(aps=aps, **d)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(d)
