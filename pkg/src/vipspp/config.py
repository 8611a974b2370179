"""Optimizer configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from vipspp.exceptions import ConfigError
from vipspp.sample_db import DISSIMILARITIES

DISSIMILARITY_ALIASES = {"kl-fwd": "forward_kl", "kl-rev": "reverse_kl"}


@dataclass
class VipsConfig:
    """Hyper-parameters of the optimizer.

    Sample counts are given per dimension and per component; the effective
    values are ``n_des_per_dim * D`` and ``n_reuse_per_dim * D``.
    """

    epsilon_min: float = 1e-2
    epsilon_max: float = 5.0
    initial_epsilon: float = 1.0
    n_des_per_dim: int = 20
    n_reuse_per_dim: int = 40
    n_add: int = 30
    n_del: int = 10
    min_weight: float = 1e-6
    initial_weight: float = 1e-29
    deltas: list[float] = field(default_factory=lambda: [1000.0, 500.0, 200.0, 100.0, 50.0])
    kappa_min: float = 1e-14
    kappa_max: float = 1e-6
    initial_kappa: float = 1e-10
    max_fit_retries: int = 5
    max_fevals: int | None = None
    max_iterations: int | None = None
    seed: int = 0
    dissimilarity: str = "mahalanobis"
    reuse: bool = True
    adapt: bool = True
    basic: bool = False
    initial_components: int = 1
    initial_mean_scale: float = 0.0
    initial_cov_scale: float = 1.0
    center_density: str = "max_model"
    max_db_origins: int | None = None
    record_time: bool = True

    def __post_init__(self):
        self.dissimilarity = DISSIMILARITY_ALIASES.get(self.dissimilarity, self.dissimilarity)
        self.validate()

    def validate(self) -> None:
        def check(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        check(0 < self.epsilon_min <= self.epsilon_max, "need 0 < epsilon_min <= epsilon_max")
        check(
            self.epsilon_min <= self.initial_epsilon <= self.epsilon_max,
            "initial_epsilon outside [epsilon_min, epsilon_max]",
        )
        check(0 < self.kappa_min <= self.kappa_max, "need 0 < kappa_min <= kappa_max")
        check(
            self.kappa_min <= self.initial_kappa <= self.kappa_max,
            "initial_kappa outside [kappa_min, kappa_max]",
        )
        check(self.n_des_per_dim >= 1, "n_des_per_dim must be >= 1")
        check(self.n_reuse_per_dim >= 0, "n_reuse_per_dim must be >= 0")
        check(self.n_add >= 1, "n_add must be >= 1")
        check(self.n_del >= 1, "n_del must be >= 1")
        check(0 < self.min_weight < 1, "min_weight must lie in (0, 1)")
        check(0 < self.initial_weight < 1, "initial_weight must lie in (0, 1)")
        check(len(self.deltas) > 0 and all(d > 0 for d in self.deltas), "deltas must be positive")
        check(self.max_fit_retries >= 0, "max_fit_retries must be >= 0")
        check(self.max_fevals is None or self.max_fevals >= 0, "max_fevals must be >= 0")
        check(self.max_iterations is None or self.max_iterations >= 0, "max_iterations must be >= 0")
        check(
            self.max_fevals is not None or self.max_iterations is not None,
            "set max_fevals or max_iterations",
        )
        check(self.dissimilarity in DISSIMILARITIES, f"unknown dissimilarity {self.dissimilarity!r}")
        check(self.initial_components >= 1, "initial_components must be >= 1")
        check(self.initial_mean_scale >= 0, "initial_mean_scale must be >= 0")
        check(self.initial_cov_scale > 0, "initial_cov_scale must be positive")
        check(self.center_density in ("max_model", "entropy"), "unknown center_density")
        check(self.max_db_origins is None or self.max_db_origins >= 1, "max_db_origins must be >= 1")

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "VipsConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_json(cls, path: str | Path) -> "VipsConfig":
        return cls.from_dict(load_config_values(path))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def updated(self, **overrides: Any) -> "VipsConfig":
        values = self.to_dict()
        values.update(overrides)
        return VipsConfig.from_dict(values)


def load_config_values(path: str | Path) -> dict[str, Any]:
    """Raw key-value pairs of a JSON configuration file, with unknown keys rejected."""
    with open(path) as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(values, dict):
        raise ConfigError("configuration file must contain a JSON object")
    unknown = set(values) - {f.name for f in fields(VipsConfig)}
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return values


TARGET_DEFAULTS: dict[str, dict[str, Any]] = {
    "gmm": {"initial_cov_scale": 1000.0},
    "logreg": {"initial_cov_scale": 100.0},
    "planar1": {"initial_cov_scale": 1.0, "n_add": 1},
    "planar4": {"initial_cov_scale": 1.0, "n_add": 1},
    "external": {},
}
