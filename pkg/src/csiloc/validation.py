"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .graph import GraphSample


def check_graph_samples(X):
    """Validate a list of GraphSamples; returns it unchanged."""
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise DataError("expected a non-empty list of GraphSample")
    for i, s in enumerate(X):
        if not isinstance(s, GraphSample):
            raise DataError(f"item {i} is {type(s).__name__}, expected GraphSample")
        if s.n_nodes == 0:
            raise DataError(f"item {i} has no AP nodes")
        if s.adjacency.shape != (s.n_nodes, s.n_nodes):
            raise DataError(f"item {i}: adjacency shape {s.adjacency.shape} "
                            f"does not match {s.n_nodes} nodes")
    return list(X)


def targets_from_samples(X):
    return np.stack([np.asarray(s.true_location, dtype=np.float64) for s in X])


def infer_room_extent(targets):
    """Smallest axis-aligned extent containing all targets (floor 1 m)."""
    mx = np.max(np.asarray(targets), axis=0)
    return tuple(float(max(v, 1.0)) for v in mx)
