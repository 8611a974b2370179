"""Reference iteration without sample reuse or structure adaptation.

Every component is updated from fresh samples of its own, fitted with
uniform weights, and the weights are then updated from a second fresh batch
per component using plain Monte-Carlo reward estimates. With a single
component, reuse off and adaptation off, the main loop follows the same
sequence of component updates.
"""

from __future__ import annotations

import time
from dataclasses import replace
from typing import TYPE_CHECKING, Callable

import numpy as np

from vipspp.mixture import MixtureModel, elbo_estimate, log_responsibilities, update_weights
from vipspp.sample_db import build_active_set, evaluate_target

if TYPE_CHECKING:
    from vipspp.config import VipsConfig
    from vipspp.runner import IterationStats, OptimizerState


def _draw_and_evaluate(m: MixtureModel, n: int, target, rngs):
    draws = [c.sample(n, r) for c, r in zip(m.components, rngs)]
    values = evaluate_target(target, np.concatenate(draws))
    return draws, np.split(values, np.cumsum([d.shape[0] for d in draws])[:-1])


def basic_iteration(
    state: "OptimizerState", config: "VipsConfig", target: Callable[[np.ndarray], np.ndarray]
) -> "IterationStats":
    """One iteration of the reference variant; updates ``state`` in place."""
    from vipspp.runner import (
        PHASE_DRAW,
        PHASE_WEIGHTS,
        ComponentStats,
        CountingTarget,
        IterationStats,
        substream,
        update_component,
    )

    start = time.perf_counter()
    it, seed = state.iteration, config.seed
    m = state.model.copy()
    n = config.n_des_per_dim * m.dim
    counter = CountingTarget(target)
    checkpoint = state.db.checkpoint()
    try:
        # component updates from samples of each component
        draws, values = _draw_and_evaluate(
            m, n, counter, [substream(seed, it, PHASE_DRAW, s.uid) for s in m.states]
        )
        for comp, X, v in zip(m.components, draws, values):
            state.db.insert(X, v, comp)
        updates = []
        for o, (comp, s, X, v) in enumerate(zip(m.components, m.states, draws, values)):
            finite = np.isfinite(v)
            X, v = X[finite], v[finite]
            y = v + log_responsibilities(m, X)[:, o]
            w = np.full(X.shape[0], 1.0 / X.shape[0])
            updates.append(update_component(comp, s, X, y, w, comp.log_density(X), config))
        m = MixtureModel(m.weights, [u.component for u in updates], [replace(u.state) for u in updates])

        # weight update from fresh samples of the updated components
        draws, values = _draw_and_evaluate(
            m, n, counter, [substream(seed, it, PHASE_WEIGHTS, s.uid) for s in m.states]
        )
        idx = [state.db.insert(X, v, c) for c, X, v in zip(m.components, draws, values)]
        rewards = np.empty(m.num_components)
        for o, (comp, X, v) in enumerate(zip(m.components, draws, values)):
            finite = np.isfinite(v)
            y = v[finite] + log_responsibilities(m, X[finite])[:, o]
            rewards[o] = np.mean(y) + comp.entropy() if y.size else m.states[o].reward
            m.states[o].reward = float(rewards[o])
        m.weights = update_weights(rewards, config.min_weight)
    except BaseException:
        state.db.rollback(checkpoint)
        raise

    active = build_active_set(state.db, np.concatenate(idx))
    elbo = elbo_estimate(m, active) if active.num_samples else float("-inf")
    state.model = m
    state.active = active
    state.fevals += counter.count
    state.iteration = it + 1
    state.seconds += time.perf_counter() - start
    return IterationStats(
        iteration=it,
        fevals=state.fevals,
        num_components=m.num_components,
        elbo=elbo,
        seconds=state.seconds if config.record_time else 0.0,
        components=[
            ComponentStats(s.uid, float(w), float(c.entropy()), float(s.epsilon), float(n), n)
            for w, c, s in zip(m.weights, m.components, m.states)
        ],
    )
