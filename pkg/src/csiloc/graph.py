"""Fine-grained CSI graphs: one node per AP, inverse-distance complete adjacency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .preprocess import build_image, clean_sample


def inverse_distance_adjacency(positions):
    """A[n, m] = 1 / euclidean(n, m) off-diagonal, zeros on the diagonal."""
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    adj = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(pos[i] - pos[j]))
            if d == 0.0:
                raise ConfigError(f"APs {i} and {j} coincide; 1/d adjacency is singular")
            adj[i, j] = adj[j, i] = 1.0 / d
    return adj


@dataclass
class CsiGraph:
    """Materialized per-position graph: one feature vector per AP node."""

    node_features: np.ndarray    # [N, D]
    adjacency: np.ndarray        # [N, N]
    ap_positions: np.ndarray     # [N, 2]
    true_location: np.ndarray    # [2]


@dataclass
class GraphSample:
    """Pre-feature bundle for end-to-end training: per-AP images plus topology."""

    images: list                 # one CsiImage per AP
    adjacency: np.ndarray
    ap_positions: np.ndarray
    true_location: np.ndarray

    @property
    def n_nodes(self):
        return len(self.images)


def build_graph(samples, extractor, ap_positions):
    """Spec-shaped graph construction: features = extractor(build_image(sample)).

    ``extractor`` maps a CsiImage to a 1-D feature array. All samples must
    come from the same reference point.
    """
    if not samples:
        raise DataError("build_graph: need at least one AP sample")
    rps = {s.rp_index for s in samples}
    if len(rps) != 1:
        raise DataError(f"build_graph: samples from different RPs {sorted(rps)}")
    feats = [np.asarray(extractor(build_image(s)), dtype=np.float64) for s in samples]
    lengths = {f.shape for f in feats}
    if len(lengths) != 1:
        raise DataError(f"build_graph: inconsistent feature lengths {lengths}")
    return CsiGraph(node_features=np.stack(feats),
                    adjacency=inverse_distance_adjacency(ap_positions),
                    ap_positions=np.asarray(ap_positions, dtype=np.float64),
                    true_location=np.asarray(samples[0].true_location, dtype=np.float64))


def graph_samples_from_dataset(dataset, clean=True):
    """One GraphSample per (RP, sample counter), nodes ordered by AP index."""
    cfg = dataset.config
    positions = np.array([ap.position for ap in cfg.aps], dtype=np.float64)
    adjacency = inverse_distance_adjacency(positions)
    out = []
    for _, _, group in dataset.graph_groups():
        images = [build_image(clean_sample(s) if clean else s) for s in group]
        out.append(GraphSample(images=images, adjacency=adjacency,
                               ap_positions=positions,
                               true_location=np.asarray(group[0].true_location)))
    return out
