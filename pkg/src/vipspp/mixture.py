"""Gaussian mixture bookkeeping: densities, responsibilities, rewards, weights."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import logsumexp

from vipspp._numeric import logsumexp as fast_logsumexp
from vipspp.exceptions import DimensionMismatchError
from vipspp.gaussian import Gaussian

if TYPE_CHECKING:
    from vipspp.sample_db import ActiveSampleSet

MIN_WEIGHT = 1e-6


@dataclass
class ComponentState:
    """Per-component optimizer state that travels with the component.

    Attributes:
        uid: Stable identifier, used to derive per-component random streams.
        epsilon: Current KL bound for the component update.
        kappa: Current ridge coefficient for the surrogate fit.
        reward: Most recent estimate of the component reward.
        low_streak: Consecutive iterations spent at or below the weight floor
            without the reward increasing.
        streak_best: Best reward seen since the streak began.
    """

    uid: int
    epsilon: float = 1.0
    kappa: float = 1e-10
    reward: float = -np.inf
    low_streak: int = 0
    streak_best: float = -np.inf


@dataclass
class MixtureModel:
    """Gaussian mixture ``q(x) = sum_o q(o) q(x|o)``."""

    weights: np.ndarray
    components: list[Gaussian]
    states: list[ComponentState] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not self.states:
            self.states = [ComponentState(uid=i) for i in range(len(self.components))]
        if not (len(self.weights) == len(self.components) == len(self.states)):
            raise ValueError("weights, components and states must have equal length")
        if len(self.components) == 0:
            raise ValueError("a mixture needs at least one component")

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def copy(self) -> "MixtureModel":
        return MixtureModel(
            self.weights.copy(),
            list(self.components),
            [replace(s) for s in self.states],
        )

    def log_component_densities(self, X: np.ndarray) -> np.ndarray:
        """``log q(x|o)`` as an ``(N, K)`` matrix."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected {self.dim} columns, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.num_components))
        for k, comp in enumerate(self.components):
            out[:, k] = comp.log_density(X)
        return out

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        """``log q(o) + log q(x|o)`` as an ``(N, K)`` matrix."""
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return self.log_component_densities(X) + log_w

    def log_density(self, X: np.ndarray) -> np.ndarray:
        return mixture_log_density(self, X)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        counts = rng.multinomial(n, self.weights / self.weights.sum())
        parts = [c.sample(k, rng) for c, k in zip(self.components, counts) if k > 0]
        X = np.concatenate(parts) if parts else np.empty((0, self.dim))
        return X[rng.permutation(n)]

    def entropies(self) -> np.ndarray:
        return np.array([c.entropy() for c in self.components])


def mixture_log_density(m: MixtureModel, X: np.ndarray) -> np.ndarray:
    """``log q(x)`` per row of ``X`` via a max-shifted log-sum-exp."""
    return fast_logsumexp(m.log_joint(X), axis=1)


def log_responsibilities(m: MixtureModel, X: np.ndarray) -> np.ndarray:
    """``log q(o|x)`` as an ``(N, K)`` matrix; rows exponentiate to 1."""
    joint = m.log_joint(X)
    return joint - fast_logsumexp(joint, axis=1, keepdims=True)


def component_rewards(
    m: MixtureModel,
    active: "ActiveSampleSet",
    log_resp: np.ndarray | None = None,
) -> np.ndarray:
    """Importance-weighted reward of choosing each component.

    ``R(o) = sum_s w_o(x_s) [log p(x_s) + log q~(o|x_s)] + H(q(x|o))``

    Args:
        m: Current mixture.
        active: Active sample set with importance weights computed for ``m``.
        log_resp: Frozen responsibilities ``(N, K)``; computed from ``m`` when
            omitted.

    Returns:
        Rewards of length ``K``. Components without any usable importance
        weight keep the reward stored in their state.
    """
    if active.num_samples == 0:
        raise ValueError("active sample set is empty")
    if active.weights is None:
        raise ValueError("importance weights have not been computed")
    if log_resp is None:
        log_resp = log_responsibilities(m, active.X)
    rewards = np.empty(m.num_components)
    entropies = m.entropies()
    for o in range(m.num_components):
        w = active.weights[o]
        if not np.all(np.isfinite(w)) or w.sum() <= 0.0:
            rewards[o] = m.states[o].reward
            continue
        y = active.log_targets + log_resp[:, o]
        mask = w > 0.0
        rewards[o] = np.dot(w[mask], y[mask]) + entropies[o]
    return rewards


def update_weights(rewards: np.ndarray, min_weight: float = MIN_WEIGHT) -> np.ndarray:
    """Softmax of the rewards, floored at ``min_weight``.

    Floored entries are pinned to exactly ``min_weight`` and the remaining
    mass is shared among the others in proportion to their softmax values.
    """
    rewards = np.asarray(rewards, dtype=float)
    w = np.exp(rewards - np.max(rewards))
    w /= w.sum()
    k = len(w)
    if k * min_weight >= 1.0:
        return np.full(k, 1.0 / k)
    floored = np.zeros(k, dtype=bool)
    while True:
        new_floor = (w < min_weight) & ~floored
        if not new_floor.any():
            break
        floored |= new_floor
        free = ~floored
        w[floored] = min_weight
        w[free] *= (1.0 - min_weight * floored.sum()) / w[free].sum()
    return w


def elbo_estimate(m: MixtureModel, active: "ActiveSampleSet") -> float:
    """Self-normalized importance estimate of ``E_q[log p~(x) - log q(x)]``."""
    if active.num_samples == 0:
        raise ValueError("active sample set is empty")
    log_q = mixture_log_density(m, active.X)
    log_w = log_q - active.log_z
    log_w -= logsumexp(log_w)
    w = np.exp(log_w)
    mask = w > 0.0
    return float(np.dot(w[mask], active.log_targets[mask] - log_q[mask]))
