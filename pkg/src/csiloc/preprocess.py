"""CSI cleaning and amplitude-phase fusion into square 3-channel images.

Amplitude is denoised by soft-thresholding wavelet detail coefficients;
phase is sanitized by removing its best linear fit over subcarriers, which
cancels the injected carrier-frequency/sampling-time offsets exactly. A
cleaned sample is fused into an n_img x n_img x 3 image: R = amplitude,
B = phase, G = amplitude flipped upside down (built-in flip augmentation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import wavelet
from .channel import CsiSample
from .errors import DataError


def denoise_amplitude(amp, levels=3):
    """Wavelet denoising (db4, soft universal threshold); length preserved.

    The noise scale is estimated from the finest detail band as
    median(|d1|)/0.6745 and the threshold is sigma*sqrt(2*ln n). Output is
    clamped at zero since amplitudes are non-negative.
    """
    amp = np.asarray(amp, dtype=np.float64)
    if amp.ndim != 1 or amp.size < 4:
        raise DataError(f"denoise_amplitude: need a 1-D vector of length >= 4, got {amp.shape}")
    if not np.all(np.isfinite(amp)):
        raise DataError("denoise_amplitude: non-finite input")
    if np.any(amp < 0):
        raise DataError("denoise_amplitude: negative amplitude")
    approx, details, pads = wavelet.wavedec(amp, levels=levels)
    if not details:
        return amp.copy()
    sigma = np.median(np.abs(details[0])) / 0.6745
    thresh = sigma * math.sqrt(2.0 * math.log(amp.size))
    soft = [np.sign(d) * np.maximum(np.abs(d) - thresh, 0.0) for d in details]
    out = wavelet.waverec(approx, soft, pads)
    return np.maximum(out[:amp.size], 0.0)


def sanitize_phase(phase, subcarrier_indices=None):
    """Unwrap phase along subcarriers and remove its least-squares linear fit.

    The residual has zero mean and zero linear trend, so any injected
    cfo_slope*k + sto_offset term vanishes along with the true channel's
    linear component.
    """
    phase = np.asarray(phase, dtype=np.float64)
    if phase.ndim != 1 or phase.size < 2:
        raise DataError(f"sanitize_phase: need >= 2 subcarriers, got shape {phase.shape}")
    if not np.all(np.isfinite(phase)):
        raise DataError("sanitize_phase: non-finite input")
    k = (np.arange(phase.size) if subcarrier_indices is None
         else np.asarray(subcarrier_indices, dtype=np.float64))
    if k.shape != phase.shape:
        raise DataError("sanitize_phase: subcarrier index vector length mismatch")
    unwrapped = np.unwrap(phase)
    slope, intercept = np.polyfit(k, unwrapped, 1)
    return unwrapped - (slope * k + intercept)


def clean_sample(sample):
    """Denoise amplitude and sanitize phase of every (rx, tx) stream."""
    csi = sample.csi
    out = np.empty_like(csi)
    for r in range(csi.shape[0]):
        for t in range(csi.shape[1]):
            amp = denoise_amplitude(np.abs(csi[r, t]))
            ph = sanitize_phase(np.angle(csi[r, t]))
            out[r, t] = amp * np.exp(1j * ph)
    return CsiSample(ap_index=sample.ap_index, rp_index=sample.rp_index,
                     true_location=sample.true_location, csi=out,
                     bandwidth_mhz=sample.bandwidth_mhz)


def image_size(n_tx, n_rx, n_subcarriers):
    return int(math.ceil(math.sqrt(n_tx * n_rx * n_subcarriers)))


@dataclass
class CsiImage:
    """Square 3-channel image in [0,1]; channel order (R, G, B)."""

    pixels: np.ndarray       # [n_img, n_img, 3]
    source: tuple[int, int]  # (ap_index, rp_index)
    n_img: int


def _normalize(values):
    lo, hi = values.min(), values.max()
    if hi - lo == 0.0:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def _to_plane(flat, n_img):
    padded = np.zeros(n_img * n_img)
    padded[:flat.size] = flat
    return padded.reshape(n_img, n_img)


def build_image(sample):
    """Fuse one cleaned CsiSample into a CsiImage.

    The tensor is flattened tx-major, then rx, then subcarrier; amplitude and
    phase are min-max normalized independently (a constant plane maps to 0.5)
    before zero padding to n_img^2 and row-major reshaping.
    """
    csi = sample.csi
    if csi.size == 0:
        raise DataError("build_image: empty CSI tensor")
    n_rx, n_tx, k = csi.shape
    n_img = image_size(n_tx, n_rx, k)
    flat = csi.transpose(1, 0, 2).reshape(-1)       # (tx, rx, k), tx slowest
    amp = _to_plane(_normalize(np.abs(flat)), n_img)
    phase = _to_plane(_normalize(np.angle(flat)), n_img)
    pixels = np.stack([amp, np.flipud(amp), phase], axis=-1)
    return CsiImage(pixels=pixels, source=(sample.ap_index, sample.rp_index), n_img=n_img)


def sample_to_image(sample):
    """Convenience: clean then fuse."""
    return build_image(clean_sample(sample))


def write_ppm(image, path):
    """Dump a CsiImage as a binary portable pixmap for eyeballing."""
    px = np.clip(image.pixels * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{image.n_img} {image.n_img}\n255\n".encode())
        f.write(px.tobytes())


def write_pgm(channel, path):
    """Dump one [n, n] channel in [0,1] as a binary portable graymap."""
    px = np.clip(np.asarray(channel) * 255.0, 0, 255).astype(np.uint8)
    h, w = px.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(px.tobytes())
