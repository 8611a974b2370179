"""Reading and writing models, logs and sample files."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from vipspp.gaussian import make_gaussian
from vipspp.mixture import MixtureModel

MODEL_VERSION = 1
LOG_HEADER = ("iter", "fevals", "elbo", "num_components", "seconds")


def model_to_dict(m: MixtureModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "dimension": m.dim,
        "weights": [float(w) for w in m.weights],
        "components": [
            {"mean": c.mean.tolist(), "covariance": c.cov.tolist()} for c in m.components
        ],
    }


def model_from_dict(data: dict) -> MixtureModel:
    """Inverse of :func:`model_to_dict`; validates shapes and the version."""
    if data.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {data.get('version')!r}")
    dim = int(data["dimension"])
    comps = []
    for entry in data["components"]:
        mean = np.asarray(entry["mean"], dtype=float)
        cov = np.asarray(entry["covariance"], dtype=float)
        if mean.shape != (dim,) or cov.shape != (dim, dim):
            raise ValueError("component shape does not match the model dimension")
        comps.append(make_gaussian(mean, cov))
    weights = np.asarray(data["weights"], dtype=float)
    if weights.shape != (len(comps),) or np.any(weights < 0):
        raise ValueError("weights must be non-negative, one per component")
    return MixtureModel(weights / weights.sum(), comps)


def save_model(m: MixtureModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(m), fh, indent=1)


def load_model(path: str | Path) -> MixtureModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def write_log(stats: Sequence, path: str | Path) -> None:
    """Write iteration statistics as CSV; floats use ``repr`` so values round-trip."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for s in stats:
            writer.writerow([s.iteration, s.fevals, repr(float(s.elbo)), s.num_components, repr(float(s.seconds))])


def save_samples(X: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, np.atleast_2d(X), delimiter=",", fmt="%.17g")


def load_samples(path: str | Path) -> np.ndarray:
    """Headerless comma-separated floats, one sample per row."""
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
