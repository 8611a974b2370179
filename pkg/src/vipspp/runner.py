"""The optimizer loop.

One iteration runs, in order: component addition and deletion, selection of
reusable samples, fresh sampling where the effective sample size is too low,
the weight update, and the independent trust-region updates of all
components, which are committed together at the end.

Randomness is drawn from substreams keyed by ``(seed, iteration, phase)`` or
``(seed, iteration, phase, component uid)``, so a run is reproducible and
does not depend on how component updates are scheduled.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from vipspp._numeric import logsumexp as fast_logsumexp
from vipspp.adaptation import AdaptationState, delete_components, maybe_add_component
from vipspp.config import VipsConfig
from vipspp.exceptions import FitFailedError, TargetEvaluationError, UpdateRejectedError
from vipspp.gaussian import Gaussian, make_gaussian
from vipspp.mixture import (
    ComponentState,
    MixtureModel,
    component_rewards,
    elbo_estimate,
    update_weights,
)
from vipspp.sample_db import (
    ActiveSampleSet,
    SampleDatabase,
    empty_active_set,
    sample_where_needed,
    select_samples,
)
from vipspp.surrogate import adapt_ridge, fit_weighted_quadratic
from vipspp.trust_region import adapt_kl_bound, gva_update

logger = logging.getLogger(__name__)

PHASE_INIT = 0
PHASE_ADD = 1
PHASE_SELECT = 2
PHASE_DRAW = 3
PHASE_WEIGHTS = 4

LINE_SEARCH_SAMPLES_PER_DIM = 10
# samples whose weight is below this fraction of the largest weight change the
# normal equations by far less than rounding, so the fit skips them
RELATIVE_WEIGHT_CUTOFF = 1e-30


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the given ``(seed, keys...)`` tuple."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


@dataclass
class ComponentStats:
    uid: int
    weight: float
    entropy: float
    epsilon: float
    n_eff: float
    n_new: int


@dataclass
class IterationStats:
    """Summary of one iteration.

    Attributes:
        iteration: Zero-based iteration index.
        fevals: Cumulative number of target evaluations after the iteration.
        num_components: Components in the committed mixture.
        elbo: Importance-sampled ELBO estimate of the committed mixture.
        seconds: Cumulative wall-clock time (0 when timing is disabled).
        components: Per-component statistics.
    """

    iteration: int
    fevals: int
    num_components: int
    elbo: float
    seconds: float
    components: list[ComponentStats] = field(default_factory=list)


class CountingTarget:
    """Wraps a target and counts evaluated rows."""

    def __init__(self, target: Callable[[np.ndarray], np.ndarray]):
        self.target = target
        self.count = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        values = self.target(X)
        self.count += np.atleast_2d(X).shape[0]
        return values


@dataclass
class OptimizerState:
    """Everything carried from one iteration to the next."""

    model: MixtureModel
    db: SampleDatabase
    adaptation: AdaptationState
    iteration: int = 0
    fevals: int = 0
    seconds: float = 0.0
    active: ActiveSampleSet | None = None


def initial_model(config: VipsConfig, dim: int) -> MixtureModel:
    """Initial mixture with means drawn from ``N(0, s^2 I)`` and isotropic covariances."""
    k = config.initial_components
    rng = substream(config.seed, PHASE_INIT)
    means = config.initial_mean_scale * rng.standard_normal((k, dim))
    cov = config.initial_cov_scale * np.eye(dim)
    comps = [make_gaussian(mu, cov) for mu in means]
    states = [
        ComponentState(uid=i, epsilon=config.initial_epsilon, kappa=config.initial_kappa)
        for i in range(k)
    ]
    return MixtureModel(np.full(k, 1.0 / k), comps, states)


def initial_state(config: VipsConfig, dim: int, model: MixtureModel | None = None) -> OptimizerState:
    model = initial_model(config, dim) if model is None else model
    adaptation = AdaptationState(
        deltas=tuple(config.deltas),
        add_rate=config.n_add,
        del_rate=config.n_del,
        initial_weight=config.initial_weight,
        min_weight=config.min_weight,
        initial_epsilon=config.initial_epsilon,
        initial_kappa=config.initial_kappa,
        center_density=config.center_density,
        next_uid=max(s.uid for s in model.states) + 1,
    )
    return OptimizerState(model, SampleDatabase(dim, config.max_db_origins), adaptation)


def _num_threads() -> int:
    try:
        return max(0, int(os.environ.get("VIPS_THREADS", "0")))
    except ValueError:
        return 0


def _map(fn, items: list) -> list:
    threads = _num_threads()
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fit_with_retries(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    component: Gaussian,
    state: ComponentState,
    config: VipsConfig,
):
    """Fit the surrogate, raising the ridge coefficient after each failure.

    Returns:
        ``(surrogate or None, kappa)`` with the adapted ridge coefficient.
    """
    kappa = state.kappa
    for _ in range(config.max_fit_retries + 1):
        try:
            surrogate = fit_weighted_quadratic(X, y, weights, kappa, whitener=component)
        except FitFailedError:
            kappa = adapt_ridge(kappa, False, config.kappa_min, config.kappa_max)
            continue
        return surrogate, adapt_ridge(kappa, True, config.kappa_min, config.kappa_max)
    return None, kappa


def _is_objective(
    comp: Gaussian, X: np.ndarray, y: np.ndarray, log_z: np.ndarray
) -> float:
    """Self-normalized estimate of ``E_comp[y] + H(comp)`` from samples with proposal ``z``."""
    log_w = comp.log_density(X) - log_z
    log_w -= logsumexp(log_w)
    w = np.exp(log_w)
    mask = w > 0.0
    return float(np.dot(w[mask], y[mask]) + comp.entropy())


@dataclass(frozen=True)
class ComponentUpdate:
    component: Gaussian
    state: ComponentState
    updated: bool


def update_component(
    comp: Gaussian,
    state: ComponentState,
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    log_z: np.ndarray,
    config: VipsConfig,
) -> ComponentUpdate:
    """Surrogate fit, trust-region step and KL-bound adaptation for one component.

    Args:
        comp: Component before the update.
        state: Its optimizer state (not modified).
        X: Samples.
        y: Regression targets ``log p~(x) + log q(o|x)``.
        weights: Self-normalized importance weights of ``comp`` on ``X``.
        log_z: Log proposal density of the samples.
        config: Optimizer configuration.
    """
    mask = weights > RELATIVE_WEIGHT_CUTOFF * weights.max()
    surrogate, kappa = fit_with_retries(X[mask], y[mask], weights[mask], comp, state, config)
    if surrogate is None:
        logger.debug("component %d: surrogate fit failed, update skipped", state.uid)
        return ComponentUpdate(comp, replace(state, kappa=kappa), False)
    try:
        new = gva_update(comp, surrogate, state.epsilon)
    except UpdateRejectedError as err:
        logger.debug("component %d: update rejected (%s)", state.uid, err)
        return ComponentUpdate(comp, replace(state, kappa=kappa), False)
    before = float(np.dot(weights[mask], y[mask]) + comp.entropy())
    after = _is_objective(new, X, y, log_z)
    epsilon = adapt_kl_bound(state.epsilon, after > before, config.epsilon_min, config.epsilon_max)
    return ComponentUpdate(new, replace(state, kappa=kappa, epsilon=epsilon), True)


def _max_new_evaluations(state: OptimizerState, config: VipsConfig) -> int:
    """Upper bound on the evaluations the next iteration can spend."""
    dim = state.model.dim
    k = state.model.num_components
    n_des = config.n_des_per_dim * dim
    extra = 0
    it = state.iteration
    if config.adapt and not config.basic and it > 0 and it % config.n_add == 0:
        k += 1
        extra = LINE_SEARCH_SAMPLES_PER_DIM * dim
    per_component = 2 * n_des if config.basic else n_des
    return k * per_component + extra


def run_iteration(
    state: OptimizerState, config: VipsConfig, target: Callable[[np.ndarray], np.ndarray]
) -> IterationStats:
    """Advance ``state`` by one iteration in place.

    If the target raises, the database and adaptation bookkeeping are rolled
    back, the model is left untouched and the error propagates.
    """
    if config.basic:
        from vipspp.basic import basic_iteration

        return basic_iteration(state, config, target)

    start = time.perf_counter()
    counter = CountingTarget(target)
    checkpoint = state.db.checkpoint()
    adaptation_backup = replace(state.adaptation, history=list(state.adaptation.history))
    try:
        stats = _iteration(state, config, counter)
    except BaseException:
        state.db.rollback(checkpoint)
        state.adaptation = adaptation_backup
        raise
    state.seconds += time.perf_counter() - start
    stats.seconds = state.seconds if config.record_time else 0.0
    return stats


def _iteration(state: OptimizerState, config: VipsConfig, counter: CountingTarget) -> IterationStats:
    it = state.iteration
    seed = config.seed
    dim = state.model.dim
    m = state.model.copy()

    # (1) structure adaptation
    if config.adapt:
        m = maybe_add_component(
            m, state.adaptation, state.db, counter, it, substream(seed, it, PHASE_ADD)
        )
        m = delete_components(m, state.adaptation)

    # (2) sample selection, (3) fresh samples where n_eff is too low
    if config.reuse:
        active = select_samples(
            state.db,
            m,
            config.n_reuse_per_dim * dim,
            config.dissimilarity,
            substream(seed, it, PHASE_SELECT),
        )
    else:
        active = empty_active_set(dim)
    rngs = [substream(seed, it, PHASE_DRAW, s.uid) for s in m.states]
    active, n_new = sample_where_needed(
        state.db, active, m, config.n_des_per_dim * dim, counter, rngs
    )
    if active.num_samples == 0:
        raise RuntimeError("no sample with a finite target value is available")

    # (4) responsibilities snapshot, (5) weight update
    log_comp = active.log_comp
    joint = log_comp + np.log(m.weights)
    log_resp = joint - fast_logsumexp(joint, axis=1, keepdims=True)
    rewards = component_rewards(m, active, log_resp)
    for s, r in zip(m.states, rewards):
        s.reward = float(r)
    m.weights = update_weights(rewards, config.min_weight)

    # E-step with the new weights; frozen for all component updates
    joint = log_comp + np.log(m.weights)
    log_resp = joint - fast_logsumexp(joint, axis=1, keepdims=True)

    # (6) independent component updates
    def work(o: int) -> ComponentUpdate:
        y = active.log_targets + log_resp[:, o]
        return update_component(
            m.components[o], m.states[o], active.X, y, active.weights[o], active.log_z, config
        )

    updates = _map(work, list(range(m.num_components)))

    # (7) atomic commit
    m = MixtureModel(
        m.weights, [u.component for u in updates], [replace(u.state) for u in updates]
    )
    elbo = elbo_estimate(m, active)
    comp_stats = [
        ComponentStats(
            uid=s.uid,
            weight=float(w),
            entropy=float(c.entropy()),
            epsilon=float(s.epsilon),
            n_eff=float(active.n_eff[o]),
            n_new=int(n_new[o]),
        )
        for o, (w, c, s) in enumerate(zip(m.weights, m.components, m.states))
    ]
    state.model = m
    state.active = active
    state.fevals += counter.count
    state.iteration = it + 1
    return IterationStats(
        iteration=it,
        fevals=state.fevals,
        num_components=m.num_components,
        elbo=elbo,
        seconds=0.0,
        components=comp_stats,
    )


def run(
    config: VipsConfig,
    target: Callable[[np.ndarray], np.ndarray],
    dim: int | None = None,
    initial: MixtureModel | None = None,
    callback: Callable[[OptimizerState, IterationStats], bool | None] | None = None,
) -> tuple[MixtureModel, list[IterationStats]]:
    """Optimize a mixture approximation of ``target``.

    Iterates until ``max_iterations`` is reached or the next iteration could
    exceed ``max_fevals``, so the evaluation budget is never overrun.

    Args:
        config: Optimizer configuration.
        target: Batched unnormalized log density.
        dim: Input dimension; defaults to ``target.dim``.
        initial: Optional initial mixture replacing the configured one.
        callback: Called after every iteration; returning ``True`` stops.

    Returns:
        The final mixture and the per-iteration statistics.
    """
    config.validate()
    if dim is None:
        dim = initial.dim if initial is not None else int(getattr(target, "dim"))
    state = initial_state(config, dim, initial.copy() if initial is not None else None)
    log: list[IterationStats] = []
    while True:
        if config.max_iterations is not None and state.iteration >= config.max_iterations:
            break
        if config.max_fevals is not None and (
            state.fevals + _max_new_evaluations(state, config) > config.max_fevals
        ):
            break
        try:
            stats = run_iteration(state, config, target)
        except TargetEvaluationError as err:
            # hand the last consistent state to the caller for serialization
            err.model, err.log = state.model, log
            raise
        log.append(stats)
        logger.info(
            "iter %d fevals %d components %d elbo %.4f",
            stats.iteration, stats.fevals, stats.num_components, stats.elbo,
        )
        if callback is not None and callback(state, stats):
            break
    return state.model, log
