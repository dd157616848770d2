"""Localization error metrics and their serializable records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .validation import check_graph_samples, targets_from_samples


@dataclass
class MetricsRecord:
    """Per-sample errors in meters plus aggregates and an error CDF."""

    errors: np.ndarray
    mean_error: float
    std_error: float
    cdf_grid: np.ndarray
    cdf_values: np.ndarray
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_errors(cls, errors, provenance=None, grid_points=101):
        errors = np.asarray(errors, dtype=np.float64)
        if errors.size == 0:
            raise DataError("MetricsRecord: no errors")
        grid = np.linspace(0.0, float(errors.max()), grid_points)
        cdf = np.array([(errors <= g).mean() for g in grid])
        return cls(errors=errors, mean_error=float(errors.mean()),
                   std_error=float(errors.std()), cdf_grid=grid, cdf_values=cdf,
                   provenance=dict(provenance or {}))

    def to_dict(self):
        return {"errors": self.errors.tolist(), "mean_error": self.mean_error,
                "std_error": self.std_error, "cdf_grid": self.cdf_grid.tolist(),
                "cdf_values": self.cdf_values.tolist(), "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(errors=np.asarray(d["errors"]), mean_error=d["mean_error"],
                   std_error=d["std_error"], cdf_grid=np.asarray(d["cdf_grid"]),
                   cdf_values=np.asarray(d["cdf_values"]),
                   provenance=d.get("provenance", {}))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def evaluate(estimator, graphs, provenance=None):
    """Per-sample euclidean error (meters) of a fitted estimator on test graphs."""
    graphs = check_graph_samples(graphs)
    preds = estimator.predict(graphs)
    truth = targets_from_samples(graphs)
    errors = np.linalg.norm(preds - truth, axis=1)
    return MetricsRecord.from_errors(errors, provenance=provenance)
