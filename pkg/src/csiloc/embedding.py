"""Graph autoencoder embeddings and MMD scenario similarity.

The encoder compresses a CSI graph into a fixed-length vector with three
graph-conv layers (ReLU + dropout) and mean pooling; the decoder broadcasts
the vector back to every node and reconstructs node features with three more
graph-conv layers. Scenario similarity is the squared maximum mean
discrepancy between embedding sample sets under a Gaussian kernel (biased
estimator, so identical sets give exactly zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .channel import substream
from .errors import ConfigError, DataError, NumericsError, TrainingError, UsageError
from .gnn import normalized_adjacency
from .params import ParamSet, sgd_step


@dataclass
class AutoencoderConfig:
    input_dim: int = 64
    hidden_dims: tuple = (32, 16)
    embed_dim: int = 8
    dropout: float = 0.1
    lr: float = 0.005
    epochs: int = 40
    batch_size: int = 8

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if len(self.hidden_dims) != 2:
            raise ConfigError("autoencoder needs exactly two hidden widths")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must be in [0, 1)")


class GraphAutoencoder:
    """Encoder/decoder over CsiGraphs, functional over a ParamSet."""

    def __init__(self, cfg=None):
        self.cfg = cfg or AutoencoderConfig()

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        c = self.cfg
        params = ParamSet()
        enc_dims = (c.input_dim, *c.hidden_dims, c.embed_dim)
        for i in range(3):
            params.add(f"enc.gc{i + 1}.w", rng.normal(
                0.0, math.sqrt(2.0 / enc_dims[i]), size=(enc_dims[i], enc_dims[i + 1])))
        dec_dims = (c.embed_dim, *reversed(c.hidden_dims), c.input_dim)
        for i in range(3):
            params.add(f"dec.gc{i + 1}.w", rng.normal(
                0.0, math.sqrt(2.0 / dec_dims[i]), size=(dec_dims[i], dec_dims[i + 1])))
        return params

    def encode(self, tape, params, graph, mode="eval", rng=None):
        a_hat = ad.constant(normalized_adjacency(graph.adjacency))
        s = ad.constant(graph.node_features)
        for i in (1, 2, 3):
            s = ad.matmul(tape, a_hat, s)
            s = ad.matmul(tape, s, params[f"enc.gc{i}.w"])
            s = ad.relu(tape, s)
            if mode != "eval" and rng is not None and self.cfg.dropout > 0:
                s = ad.dropout(tape, s, self.cfg.dropout, rng)
        return ad.global_mean(tape, s, axis=0)

    def decode(self, tape, params, embedding, adjacency):
        n = adjacency.shape[0]
        a_hat = ad.constant(normalized_adjacency(adjacency))
        row = ad.reshape(tape, embedding, (1, -1))
        s = ad.matmul(tape, ad.constant(np.ones((n, 1))), row)   # broadcast to nodes
        for i in (1, 2, 3):
            s = ad.matmul(tape, a_hat, s)
            s = ad.matmul(tape, s, params[f"dec.gc{i}.w"])
            if i < 3:
                s = ad.relu(tape, s)
        return s

    def reconstruction_loss(self, tape, params, graph, mode="train", rng=None):
        """Mean squared error between input and reconstructed node features."""
        h = self.encode(tape, params, graph, mode, rng)
        recon = self.decode(tape, params, h, graph.adjacency)
        loss = ad.mse_loss(tape, ad.reshape(tape, recon, (-1,)),
                           graph.node_features.reshape(-1))
        return ad.scale(tape, loss, 1.0 / graph.node_features.size)


def train_autoencoder(graphs_by_scenario, cfg=None, seed=0, log=None):
    """Train the shared autoencoder on all historical scenarios' graphs."""
    if len(graphs_by_scenario) < 2:
        raise DataError("train_autoencoder: need graphs from >= 2 scenarios")
    graphs = [g for graphs in graphs_by_scenario for g in graphs]
    model = GraphAutoencoder(cfg)
    cfg = model.cfg
    params = model.init_params(seed)
    for epoch in range(cfg.epochs):
        rng = substream(seed, 0xAE, epoch)
        order = rng.permutation(len(graphs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            tape = ad.Tape()
            try:
                losses = [model.reconstruction_loss(tape, params, graphs[i], "train", rng)
                          for i in batch]
                total = losses[0] if len(losses) == 1 else ad.sum_tensors(tape, losses)
                total = ad.scale(tape, total, 1.0 / len(losses))
            except NumericsError as e:
                raise TrainingError(f"autoencoder epoch {epoch}: {e}") from e
            ad.backward(tape, total)
            sgd_step(params, cfg.lr)
            epoch_loss += float(total.value) * len(batch)
        if log is not None:
            log.append({"epoch": epoch, "loss": epoch_loss / len(graphs)})
    return params


def embed_graphs(model, params, graphs):
    """Eval-mode embeddings (dropout off); one row per graph."""
    out = np.empty((len(graphs), model.cfg.embed_dim))
    for i, g in enumerate(graphs):
        out[i] = model.encode(None, params, g, "eval").value
    return out


# ---------------------------------------------------------------------------
# maximum mean discrepancy


def _sq_dists(xs, ys):
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    diff = xs[:, None, :] - ys[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_sigma(xs, ys):
    """Median pairwise distance of the pooled sets (zero pairs excluded)."""
    pooled = np.vstack([np.atleast_2d(xs), np.atleast_2d(ys)])
    d2 = _sq_dists(pooled, pooled)
    vals = np.sqrt(d2[np.triu_indices(len(pooled), k=1)])
    vals = vals[vals > 0]
    if vals.size == 0:
        return 1.0
    return float(np.median(vals))


def mmd2(xs, ys, sigma):
    """Biased squared-MMD estimator with a Gaussian kernel.

    mean k(x, x') + mean k(y, y') - 2 mean k(x, y); exactly zero when the two
    multisets coincide, and symmetric in its arguments.
    """
    if sigma <= 0:
        raise UsageError(f"mmd2: kernel width must be > 0, got {sigma}")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.size == 0 or ys.size == 0:
        raise UsageError("mmd2: empty embedding set")
    gamma = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-gamma * _sq_dists(xs, xs)).mean()
    kyy = np.exp(-gamma * _sq_dists(ys, ys)).mean()
    kxy = np.exp(-gamma * _sq_dists(xs, ys)).mean()
    return float(kxx + kyy - 2.0 * kxy)
