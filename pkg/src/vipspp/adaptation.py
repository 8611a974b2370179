"""Adding and deleting mixture components."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from vipspp.gaussian import Gaussian, make_gaussian, scale_to_entropy
from vipspp.mixture import MIN_WEIGHT, ComponentState, MixtureModel, log_responsibilities
from vipspp.sample_db import SampleDatabase, evaluate_target

DEFAULT_DELTAS = (1000.0, 500.0, 200.0, 100.0, 50.0)
INITIAL_WEIGHT = 1e-29
ALPHA_GRID = np.linspace(0.0, 1.0, 11)
REWARD_INCREASE_TOL = 1e-12


@dataclass
class AdaptationState:
    """Bookkeeping for component addition and deletion.

    Attributes:
        deltas: Assumed negative log initial weights, used in turn.
        cursor: Index of the next value in ``deltas``.
        add_rate: Add a component every ``add_rate`` iterations.
        del_rate: Delete after this many low-weight iterations without
            reward improvement.
        initial_weight: Weight given to new components.
        min_weight: Weight at or below which a component counts as low.
        initial_epsilon: KL bound of new components.
        initial_kappa: Ridge coefficient of new components.
        center_density: ``"max_model"`` uses the largest mixture log density
            over all candidates as the new component's log density at its
            mean; ``"entropy"`` uses ``D/2 - H_init``.
        next_uid: Identifier handed to the next new component.
    """

    deltas: tuple[float, ...] = DEFAULT_DELTAS
    cursor: int = 0
    add_rate: int = 30
    del_rate: int = 10
    initial_weight: float = INITIAL_WEIGHT
    min_weight: float = MIN_WEIGHT
    initial_epsilon: float = 1.0
    initial_kappa: float = 1e-10
    center_density: str = "max_model"
    next_uid: int = 0
    history: list[dict] = field(default_factory=list)

    def next_delta(self) -> float:
        delta = self.deltas[self.cursor % len(self.deltas)]
        self.cursor = (self.cursor + 1) % len(self.deltas)
        return float(delta)


def candidate_scores(
    log_targets: np.ndarray,
    log_model: np.ndarray,
    delta: float,
    log_center: float | None = None,
) -> np.ndarray:
    """Approximate initial reward of a component placed at each candidate.

    ``score = log p~(x) - max(log q(x), log_center - delta)``, where
    ``log_center`` defaults to the largest ``log q`` among the candidates.
    """
    if log_center is None:
        log_center = float(np.max(log_model))
    return log_targets - np.maximum(log_model, log_center - delta)


def score_candidates(
    db: SampleDatabase,
    m: MixtureModel,
    delta: float,
    center_density: str = "max_model",
) -> tuple[int, float]:
    """Best database sample for the mean of a new component.

    Returns:
        The database index of the winning sample (lowest index on ties) and
        its score.

    Raises:
        ValueError: If the database holds no usable sample.
    """
    idx = db.candidate_indices()
    if idx.size == 0:
        raise ValueError("no candidate samples in the database")
    X = db.X[idx]
    log_model = m.log_density(X)
    if center_density == "max_model":
        log_center = None
    elif center_density == "entropy":
        log_center = 0.5 * m.dim - target_entropy(m)
    else:
        raise ValueError(f"unknown center_density {center_density!r}")
    scores = candidate_scores(db.log_targets[idx], log_model, delta, log_center)
    best = int(np.argmax(scores))  # first occurrence -> lowest index
    return int(idx[best]), float(scores[best])


def target_entropy(m: MixtureModel) -> float:
    """Weighted average entropy of the components."""
    return float(np.dot(m.weights, m.entropies()) / m.weights.sum())


def candidate_covariances(m: MixtureModel, mean_new: np.ndarray, entropy: float):
    """Isotropic and responsibility-averaged covariances, both scaled to ``entropy``."""
    d = m.dim
    eye = np.eye(d)
    cov_iso = scale_to_entropy(eye, entropy) * eye
    resp = np.exp(log_responsibilities(m, mean_new[None, :])[0])
    cov_avg = np.einsum("k,kij->ij", resp, np.array([c.cov for c in m.components]))
    cov_avg = 0.5 * (cov_avg + cov_avg.T)
    cov_avg = scale_to_entropy(cov_avg, entropy) * cov_avg
    return cov_iso, cov_avg


def init_covariance(
    m: MixtureModel,
    mean_new: np.ndarray,
    entropy: float,
    target: Callable[[np.ndarray], np.ndarray],
    db: SampleDatabase,
    rng: np.random.Generator,
    samples_per_dim: int = 10,
) -> np.ndarray:
    """Line search between isotropic and averaged covariance.

    Draws ``samples_per_dim * D`` samples, half from each of the two candidate
    Gaussians, stores them in the database, and evaluates the expected
    target log density of ``N(mean_new, a * cov_iso + (1 - a) * cov_avg)``
    for ``a`` in ``0, 0.1, ..., 1`` by self-normalized importance sampling.
    Ties go to the larger ``a``.
    """
    if not np.isfinite(entropy):
        raise ValueError("initial entropy must be finite")
    mean_new = np.asarray(mean_new, dtype=float)
    cov_iso, cov_avg = candidate_covariances(m, mean_new, entropy)
    g_iso = make_gaussian(mean_new, cov_iso)
    g_avg = make_gaussian(mean_new, cov_avg)
    n_total = samples_per_dim * m.dim
    n_iso = (n_total + 1) // 2
    X_iso = g_iso.sample(n_iso, rng)
    X_avg = g_avg.sample(n_total - n_iso, rng)
    X = np.concatenate([X_iso, X_avg])
    values = evaluate_target(target, X)
    db.insert(X_iso, values[:n_iso], g_iso)
    db.insert(X_avg, values[n_iso:], g_avg)

    finite = np.isfinite(values)
    X, values = X[finite], values[finite]
    if X.shape[0] == 0:
        return cov_iso
    log_z = np.logaddexp(g_iso.log_density(X), g_avg.log_density(X)) - np.log(2.0)
    best_alpha, best_value = 1.0, -np.inf
    for alpha in ALPHA_GRID[::-1]:
        g = make_gaussian(mean_new, alpha * cov_iso + (1.0 - alpha) * cov_avg)
        log_w = g.log_density(X) - log_z
        w = np.exp(log_w - logsumexp(log_w))
        value = float(np.dot(w, values))
        if value > best_value + 1e-12 * (1.0 + abs(best_value)):
            best_alpha, best_value = alpha, value
    return best_alpha * cov_iso + (1.0 - best_alpha) * cov_avg


def add_component(
    m: MixtureModel, component: Gaussian, state: AdaptationState
) -> MixtureModel:
    """Append ``component`` with the initial weight; existing weights are scaled down."""
    w0 = state.initial_weight
    weights = np.append(m.weights * (1.0 - w0), w0)
    new_state = ComponentState(
        uid=state.next_uid, epsilon=state.initial_epsilon, kappa=state.initial_kappa
    )
    state.next_uid += 1
    return MixtureModel(weights, [*m.components, component], [*m.states, new_state])


def maybe_add_component(
    m: MixtureModel,
    state: AdaptationState,
    db: SampleDatabase,
    target: Callable[[np.ndarray], np.ndarray],
    iteration: int,
    rng: np.random.Generator,
) -> MixtureModel:
    """Add one component every ``add_rate`` iterations (never at iteration 0)."""
    if iteration <= 0 or iteration % state.add_rate != 0:
        return m
    if db.candidate_indices().size == 0:
        return m
    delta = state.next_delta()
    best, score = score_candidates(db, m, delta, state.center_density)
    mean_new = db.X[best].copy()
    entropy = target_entropy(m)
    cov = init_covariance(m, mean_new, entropy, target, db, rng)
    state.history.append({"iteration": iteration, "delta": delta, "index": best, "score": score})
    return add_component(m, make_gaussian(mean_new, cov), state)


def delete_components(m: MixtureModel, state: AdaptationState) -> MixtureModel:
    """Remove components that stayed at low weight without improving their reward.

    A component's streak grows each call while its weight is at or below the
    floor and its reward does not exceed the best reward since the streak
    began; it is deleted once the streak reaches ``del_rate``. The last
    component and the single heaviest component are never deleted.
    """
    threshold = state.min_weight * (1.0 + 1e-9)
    heaviest = int(np.argmax(m.weights))
    keep = np.ones(m.num_components, dtype=bool)
    for o, s in enumerate(m.states):
        if m.weights[o] > threshold:
            s.low_streak = 0
            s.streak_best = -np.inf
            continue
        if s.low_streak == 0 or s.reward > s.streak_best + REWARD_INCREASE_TOL:
            s.low_streak = 1
            s.streak_best = s.reward
        else:
            s.low_streak += 1
        if s.low_streak >= state.del_rate and o != heaviest:
            keep[o] = False
    if keep.all():
        return m
    if not keep.any():
        keep[heaviest] = True
    weights = m.weights[keep]
    return MixtureModel(
        weights / weights.sum(),
        [c for c, k in zip(m.components, keep) if k],
        [s for s, k in zip(m.states, keep) if k],
    )
