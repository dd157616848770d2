"""CNN front-end plus spatial pyramid pooling.

Maps a variable-size CsiImage to a fixed-length node feature vector: two
3x3 conv blocks (conv -> ReLU -> batch norm) around one 2x2 max pool, then
pyramid pooling at the configured levels, then a fully connected layer. The
pyramid output length is channels * sum(c^2) regardless of input size, which
is what makes features from different bandwidths and antenna counts
interchangeable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass
class SppConfig:
    levels: tuple = (1, 2, 4)
    channels: int = 8
    pool: str = "max"   # or "avg"

    def __post_init__(self):
        self.levels = tuple(int(c) for c in self.levels)
        if not self.levels or any(c < 1 for c in self.levels):
            raise ConfigError("SPP levels must be positive integers")
        if list(self.levels) != sorted(self.levels):
            raise ConfigError("SPP levels must be sorted ascending")
        if self.pool not in ("max", "avg"):
            raise ConfigError(f"unknown SPP pool kind {self.pool!r}")
        if self.channels < 1:
            raise ConfigError("SPP channels must be >= 1")

    @property
    def output_length(self):
        return self.channels * sum(c * c for c in self.levels)


def _pyramid_spans(z, c):
    """c spans of size ceil(z/c) at stride floor(z/c); the last span is
    widened to the boundary so every pixel is covered."""
    win = math.ceil(z / c)
    stride = math.floor(z / c)
    spans = [(i * stride, i * stride + win) for i in range(c)]
    spans[-1] = (spans[-1][0], z)
    return spans


def spp(tape, fmap, cfg):
    """Pyramid-pool a [C, z, z] map into a vector of length C * sum(c_l^2).

    A batched [B, C, z, z] map yields [B, C * sum(c_l^2)] instead.
    """
    batched = fmap.value.ndim == 4
    z, z2 = fmap.value.shape[-2:]
    if z != z2:
        raise ConfigError(f"spp: feature map must be square, got {fmap.value.shape}")
    if z < max(cfg.levels):
        raise ConfigError(f"spp: map size {z} smaller than finest level {max(cfg.levels)}")
    parts = []
    for level in cfg.levels:
        spans = _pyramid_spans(z, level)
        pooled = ad.interval_pool(tape, fmap, spans, spans, kind=cfg.pool)
        shape = (fmap.value.shape[0], -1) if batched else (-1,)
        parts.append(ad.reshape(tape, pooled, shape))   # channel-major within a level
    return ad.concat(tape, parts, axis=1 if batched else 0)


def init_extractor_params(params, prefix, rng, cfg, feature_dim, in_channels=3):
    """He-initialized conv weights, unit batch-norm, zero biases."""
    c = cfg.channels

    def conv_w(cout, cin):
        return rng.normal(0.0, math.sqrt(2.0 / (cin * 9)), size=(cout, cin, 3, 3))

    params.add(f"{prefix}.conv1.w", conv_w(c, in_channels))
    params.add(f"{prefix}.conv1.b", np.zeros(c))
    params.add(f"{prefix}.conv2.w", conv_w(c, c))
    params.add(f"{prefix}.conv2.b", np.zeros(c))
    for bn in ("bn1", "bn2"):
        params.add(f"{prefix}.{bn}.gamma", np.ones(c))
        params.add(f"{prefix}.{bn}.beta", np.zeros(c))
        params.add(f"{prefix}.{bn}.mean", np.zeros(c), trainable=False)
        params.add(f"{prefix}.{bn}.var", np.ones(c), trainable=False)
    d_in = cfg.output_length
    params.add(f"{prefix}.fc.w", rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, feature_dim)))
    params.add(f"{prefix}.fc.b", np.zeros(feature_dim))
    return params


def _bn(tape, params, prefix, name, x, mode, momentum, eps):
    return ad.batchnorm(tape, x,
                        params[f"{prefix}.{name}.gamma"], params[f"{prefix}.{name}.beta"],
                        params[f"{prefix}.{name}.mean"], params[f"{prefix}.{name}.var"],
                        mode, momentum=momentum, eps=eps)


def conv_stack(tape, params, prefix, pixels, mode, momentum=0.1, eps=1e-5):
    """Image [n, n, 3] -> feature map [C, floor(n/2), floor(n/2)].

    Conv batch norm always normalizes per image (sizes vary with bandwidth
    and antennas, so running spatial statistics never drive inference);
    "train" mode still updates the running buffers.
    """
    n = pixels.shape[0]
    if n < 4:
        raise ConfigError(f"conv_stack: image size {n} too small (need >= 4)")
    if mode == "eval":
        mode = "inner"
    x = ad.constant(np.transpose(pixels, (2, 0, 1)))    # channel-first
    h = ad.conv2d(tape, x, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"],
                  stride=1, pad=1)
    h = ad.relu(tape, h)
    h = _bn(tape, params, prefix, "bn1", h, mode, momentum, eps)
    h = ad.window_max_pool(tape, h, 2, 2)
    h = ad.conv2d(tape, h, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"],
                  stride=1, pad=1)
    h = ad.relu(tape, h)
    h = _bn(tape, params, prefix, "bn2", h, mode, momentum, eps)
    return h


def extract(tape, params, prefix, image, cfg, mode, momentum=0.1, eps=1e-5):
    """CsiImage -> fixed-length feature tensor, differentiable end to end."""
    fmap = conv_stack(tape, params, prefix, image.pixels, mode, momentum, eps)
    vec = spp(tape, fmap, cfg)
    row = ad.reshape(tape, vec, (1, -1))
    row = ad.matmul(tape, row, params[f"{prefix}.fc.w"])
    row = ad.add(tape, row, params[f"{prefix}.fc.b"])
    return ad.reshape(tape, row, (-1,))


def extract_batch(tape, params, prefix, images, cfg, mode, momentum=0.1, eps=1e-5):
    """Same-size CsiImages -> [B, D'] features, numerically equal to extract().

    Conv batch norm stays per-image (see conv_stack); batching only removes
    per-image op overhead.
    """
    n = images[0].n_img
    if any(im.n_img != n for im in images):
        raise ConfigError("extract_batch: images must share one size")
    if n < 4:
        raise ConfigError(f"extract_batch: image size {n} too small (need >= 4)")
    bn_mode = "inner" if mode == "eval" else mode
    x = ad.constant(np.stack([np.transpose(im.pixels, (2, 0, 1)) for im in images]))
    h = ad.conv2d(tape, x, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"],
                  stride=1, pad=1)
    h = ad.relu(tape, h)
    h = ad.instance_batchnorm(tape, h, params[f"{prefix}.bn1.gamma"],
                              params[f"{prefix}.bn1.beta"], params[f"{prefix}.bn1.mean"],
                              params[f"{prefix}.bn1.var"], bn_mode, momentum, eps)
    h = ad.window_max_pool(tape, h, 2, 2)
    h = ad.conv2d(tape, h, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"],
                  stride=1, pad=1)
    h = ad.relu(tape, h)
    h = ad.instance_batchnorm(tape, h, params[f"{prefix}.bn2.gamma"],
                              params[f"{prefix}.bn2.beta"], params[f"{prefix}.bn2.mean"],
                              params[f"{prefix}.bn2.var"], bn_mode, momentum, eps)
    vec = spp(tape, h, cfg)
    rows = ad.matmul(tape, vec, params[f"{prefix}.fc.w"])
    return ad.add(tape, rows, params[f"{prefix}.fc.b"])
