"""Self-describing binary container for generated CSI datasets.

Layout (all integers little-endian):

    magic "CSID" | version u32 | config_len u32 | config JSON (canonical)
    | sha256(config JSON) 32B | n_rx u32 | n_rps u32 | n_aps u32
    | samples_per_rp u32 | counter_offset u32
    | per-AP dimension table (n_tx u32, K u32, bw u32) | records

Each record: ap u32 | rp u32 | location 2*f64 | CSI values as interleaved
little-endian float64 (re, im) in C order [n_rx, n_tx, K]. Record order is
(rp, ap, counter), matching CsiDataset.samples. The reader recomputes the
config digest and rejects files whose header was altered.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .channel import CsiDataset, CsiSample, subcarrier_count
from .errors import DataError
from .scenario import ScenarioConfig

_MAGIC = b"CSID"
_VERSION = 1


def save_dataset(ds, path):
    cfg = ds.config
    blob = cfg.canonical_json().encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(blob)))
        f.write(blob)
        f.write(hashlib.sha256(blob).digest())
        f.write(struct.pack("<IIIII", cfg.n_rx, ds.n_rps, cfg.n_aps, ds.samples_per_rp,
                            ds.counter_offset))
        for ap in cfg.aps:
            f.write(struct.pack("<III", ap.n_tx,
                                subcarrier_count(ap.bandwidth_mhz), ap.bandwidth_mhz))
        for s in ds.samples:
            f.write(struct.pack("<II", s.ap_index, s.rp_index))
            f.write(struct.pack("<dd", *s.true_location))
            inter = np.empty(s.csi.size * 2)
            inter[0::2] = s.csi.real.ravel()
            inter[1::2] = s.csi.imag.ravel()
            f.write(inter.astype("<f8").tobytes())


def load_dataset(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a CSI dataset file")
    version, clen = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported dataset version {version}")
    off = 12
    blob = raw[off:off + clen]
    off += clen
    stored = raw[off:off + 32]
    off += 32
    if hashlib.sha256(blob).digest() != stored:
        raise DataError(f"{path}: config digest mismatch")
    cfg = ScenarioConfig.from_dict(json.loads(blob.decode()))
    n_rx, n_rps, n_aps, samples_per_rp, counter_offset = struct.unpack_from(
        "<IIIII", raw, off)
    off += 20
    dims = []
    for _ in range(n_aps):
        n_tx, k, bw = struct.unpack_from("<III", raw, off)
        off += 12
        dims.append((n_tx, k, bw))
    if n_rps != cfg.rp_grid().shape[0] or n_aps != cfg.n_aps or n_rx != cfg.n_rx:
        raise DataError(f"{path}: dimension table disagrees with embedded config")

    samples = []
    for _ in range(n_rps * n_aps * samples_per_rp):
        ap_index, rp_index = struct.unpack_from("<II", raw, off)
        off += 8
        loc = np.frombuffer(raw, dtype="<f8", count=2, offset=off).copy()
        off += 16
        n_tx, k, bw = dims[ap_index]
        count = n_rx * n_tx * k * 2
        inter = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        off += count * 8
        csi = (inter[0::2] + 1j * inter[1::2]).reshape(n_rx, n_tx, k)
        samples.append(CsiSample(ap_index=ap_index, rp_index=rp_index,
                                 true_location=loc, csi=csi,
                                 bandwidth_mhz=bw).validate(cfg))
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes after last record")
    return CsiDataset(config=cfg, samples_per_rp=samples_per_rp, samples=samples,
                      counter_offset=counter_offset)
