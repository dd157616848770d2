"""Graph localizer: three graph-conv layers over AP nodes, mean pooling, 2-D head.

Layer update: S <- ReLU(BN(A_hat @ S @ W)) with A_hat the row-normalized
adjacency plus self-loops, so each node merges its own feature with
inverse-distance weighted neighbor messages. Locations are normalized to
[0, 1]^2 by room extent during training and denormalized for metrics.

Batch handling: training stacks all graphs of a mini-batch behind a
block-diagonal adjacency so graph-layer batch norm sees every node in the
batch (per-graph statistics over a handful of AP nodes would normalize the
graph-level signal away). Eval mode uses the running buffers, which training
and the calibrate() pass keep meaningful. The conv extractor instead
normalizes per image in every mode, since image sizes vary with bandwidth
and antenna count; its running buffers are tracked but never drive inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import feature as ft
from .errors import ConfigError, ShapeError
from .params import ParamSet


def normalized_adjacency(adjacency):
    """Row-normalized (A + I); rows sum to one."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"normalized_adjacency: expected square matrix, got {a.shape}")
    a_hat = a + np.eye(a.shape[0])
    return a_hat / a_hat.sum(axis=1, keepdims=True)


def _block_diag(mats):
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    off = 0
    for m in mats:
        k = m.shape[0]
        out[off:off + k, off:off + k] = m
        off += k
    return out


def _mean_pool_matrix(sizes):
    out = np.zeros((len(sizes), sum(sizes)))
    off = 0
    for g, n in enumerate(sizes):
        out[g, off:off + n] = 1.0 / n
        off += n
    return out


@dataclass
class LocalizerConfig:
    """Architecture knobs for the extractor + GNN localizer."""

    spp: ft.SppConfig = field(default_factory=ft.SppConfig)
    feature_dim: int = 64
    gnn_dims: tuple = (32, 32, 16)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if isinstance(self.spp, dict):
            self.spp = ft.SppConfig(**self.spp)
        self.gnn_dims = tuple(int(d) for d in self.gnn_dims)
        if len(self.gnn_dims) != 3:
            raise ConfigError("gnn_dims must name exactly three layer widths")


def init_gnn_params(params, prefix, rng, in_dim, dims, out_dim=2):
    d_prev = in_dim
    for i, d in enumerate(dims, start=1):
        params.add(f"{prefix}.gc{i}.w",
                   rng.normal(0.0, math.sqrt(2.0 / d_prev), size=(d_prev, d)))
        params.add(f"{prefix}.bn{i}.gamma", np.ones(d))
        params.add(f"{prefix}.bn{i}.beta", np.zeros(d))
        params.add(f"{prefix}.bn{i}.mean", np.zeros(d), trainable=False)
        params.add(f"{prefix}.bn{i}.var", np.ones(d), trainable=False)
        d_prev = d
    params.add(f"{prefix}.fc.w", rng.normal(0.0, math.sqrt(1.0 / d_prev),
                                            size=(d_prev, out_dim)))
    params.add(f"{prefix}.fc.b", np.full(out_dim, 0.5))
    return params


def gnn_forward_batch(tape, params, prefix, node_features, adjacencies, mode,
                      momentum=0.1, eps=1e-5):
    """Run the graph layers over a batch.

    node_features: [sum(N_i), D] tensor of stacked per-graph node features;
    adjacencies: the per-graph adjacency matrices, in stacking order.
    Returns a [n_graphs, 2] tensor of normalized positions.
    """
    sizes = [a.shape[0] for a in adjacencies]
    a_block = ad.constant(_block_diag([normalized_adjacency(a) for a in adjacencies]))
    s = node_features
    for i in (1, 2, 3):
        s = ad.matmul(tape, a_block, s)
        s = ad.matmul(tape, s, params[f"{prefix}.gc{i}.w"])
        s = ad.batchnorm(tape, s, params[f"{prefix}.bn{i}.gamma"],
                         params[f"{prefix}.bn{i}.beta"], params[f"{prefix}.bn{i}.mean"],
                         params[f"{prefix}.bn{i}.var"], mode,
                         momentum=momentum, eps=eps, channel_axis=1)
        s = ad.relu(tape, s)
    pooled = ad.matmul(tape, ad.constant(_mean_pool_matrix(sizes)), s)
    out = ad.matmul(tape, pooled, params[f"{prefix}.fc.w"])
    return ad.add(tape, out, params[f"{prefix}.fc.b"])


def gnn_forward(graph, params, mode="eval", prefix="gnn", tape=None):
    """Predict a (normalized) 2-vector from one CsiGraph with static features."""
    own_tape = tape if tape is not None else ad.Tape()
    feats = ad.constant(graph.node_features)
    out = gnn_forward_batch(own_tape, params, prefix, feats, [graph.adjacency], mode)
    return ad.reshape(own_tape, out, (-1,))


class GraphLocalizerModel:
    """Extractor + GNN composite, expressed functionally over a ParamSet.

    Forward consumes GraphSamples (per-AP images + topology); node features
    are recomputed inside the tape so training is end to end.
    """

    def __init__(self, cfg=None):
        self.cfg = cfg or LocalizerConfig()

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        params = ft.init_extractor_params(ParamSet(), "extractor", rng,
                                          self.cfg.spp, self.cfg.feature_dim)
        init_gnn_params(params, "gnn", rng, self.cfg.feature_dim, self.cfg.gnn_dims)
        return params

    def _stacked_features(self, tape, params, samples, mode):
        """Extract all node features, batching images of equal size together."""
        cfg = self.cfg
        images = [img for sample in samples for img in sample.images]
        by_size = {}
        for k, img in enumerate(images):
            by_size.setdefault(img.n_img, []).append(k)
        parts = []
        grouped_order = []
        for n in sorted(by_size):
            ks = by_size[n]
            parts.append(ft.extract_batch(tape, params, "extractor",
                                          [images[k] for k in ks], cfg.spp, mode,
                                          cfg.bn_momentum, cfg.bn_eps))
            grouped_order.extend(ks)
        stacked = parts[0] if len(parts) == 1 else ad.concat(tape, parts, axis=0)
        if grouped_order == sorted(grouped_order):
            return stacked
        perm = np.zeros((len(images), len(images)))
        for pos, k in enumerate(grouped_order):
            perm[k, pos] = 1.0
        return ad.matmul(tape, ad.constant(perm), stacked)

    def forward_batch(self, tape, params, samples, mode, momentum=None):
        feats = self._stacked_features(tape, params, samples, mode)
        return gnn_forward_batch(
            tape, params, "gnn", feats, [s.adjacency for s in samples], mode,
            self.cfg.bn_momentum if momentum is None else momentum, self.cfg.bn_eps)

    def forward(self, tape, params, sample, mode):
        out = self.forward_batch(tape, params, [sample], mode)
        return ad.reshape(tape, out, (-1,))

    def batch_loss(self, tape, params, samples, room_extent, mode, reduction="sum",
                   momentum=None):
        """Summed (or mean-per-graph) squared error in normalized coordinates."""
        preds = self.forward_batch(tape, params, samples, mode, momentum=momentum)
        targets = np.stack([np.asarray(s.true_location) for s in samples]) \
            / np.asarray(room_extent, dtype=np.float64)
        loss = ad.mse_loss(tape, preds, targets)
        if reduction == "mean":
            loss = ad.scale(tape, loss, 1.0 / len(samples))
        elif reduction != "sum":
            raise ConfigError(f"unknown loss reduction {reduction!r}")
        return loss

    def calibrate(self, params, samples):
        """Set batch-norm running buffers to the full-batch statistics."""
        if samples:
            self.forward_batch(None, params, samples, "train", momentum=1.0)

    def predict(self, params, samples, room_extent):
        extent = np.asarray(room_extent, dtype=np.float64)
        return self.forward_batch(None, params, samples, "eval").value * extent
