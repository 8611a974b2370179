"""Sample database, active-set selection and importance weighting.

Every target evaluation is stored together with the Gaussian it was drawn
from. Each iteration assembles an *active set* from the database: for every
mixture component, origins (sampling Gaussians) are drawn without
replacement with probability ``exp(-d(component, origin) - usage)`` and
their samples are added until enough have been counted. The active samples
are then treated as draws from the mixture of their origins, which yields
self-normalized importance weights for every component.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from vipspp._numeric import logsumexp as fast_logsumexp
from vipspp.exceptions import TargetEvaluationError
from vipspp.gaussian import Gaussian, kl_divergence
from vipspp.mixture import MixtureModel

logger = logging.getLogger(__name__)

DISSIMILARITIES = ("mahalanobis", "reverse_kl", "forward_kl", "uniform")


class SampleDatabase:
    """Append-only store of ``(x, log p~(x), origin)`` records.

    Records with ``log p~(x) = -inf`` are stored but never selected for
    reuse; records with NaN targets are rejected.

    Args:
        dim: Dimension of the samples.
        max_origins: Optional cap on the number of reusable origins. When
            exceeded, the oldest origins stop being selectable (their records
            remain stored). ``None`` keeps everything reusable.
    """

    def __init__(self, dim: int, max_origins: int | None = None):
        self.dim = dim
        self.max_origins = max_origins
        self.origins: list[Gaussian] = []
        self._origin_lookup: dict[int, int] = {}
        self._members: list[list[int]] = []
        self._usage: list[int] = []
        self._active_from = 0
        self._X = np.empty((0, dim))
        self._log_targets = np.empty(0)
        self._origin_of = np.empty(0, dtype=np.int64)
        self._size = 0
        self.num_rejected = 0

    def __len__(self) -> int:
        return self._size

    @property
    def X(self) -> np.ndarray:
        return self._X[: self._size]

    @property
    def log_targets(self) -> np.ndarray:
        return self._log_targets[: self._size]

    @property
    def origin_of(self) -> np.ndarray:
        return self._origin_of[: self._size]

    @property
    def num_origins(self) -> int:
        return len(self.origins)

    @property
    def usage(self) -> np.ndarray:
        return np.asarray(self._usage, dtype=float)

    def members(self, origin: int) -> list[int]:
        return self._members[origin]

    def reusable_origins(self) -> np.ndarray:
        """Indices of origins that can be selected and have reusable samples."""
        ids = np.arange(self._active_from, len(self.origins))
        return np.array([i for i in ids if self._members[i]], dtype=np.int64)

    def candidate_indices(self) -> np.ndarray:
        """Database indices of all reusable (finite-target) records."""
        if self._active_from == 0:
            idx = np.flatnonzero(np.isfinite(self.log_targets))
            return idx
        keep = self.origin_of >= self._active_from
        return np.flatnonzero(keep & np.isfinite(self.log_targets))

    def increment_usage(self, origin: int) -> None:
        self._usage[origin] += 1

    def origin_index(self, origin: Gaussian) -> int:
        key = id(origin)
        if key not in self._origin_lookup:
            self._origin_lookup[key] = len(self.origins)
            self.origins.append(origin)
            self._members.append([])
            self._usage.append(0)
            if self.max_origins is not None:
                self._active_from = max(0, len(self.origins) - self.max_origins)
        return self._origin_lookup[key]

    def checkpoint(self) -> tuple:
        """Snapshot of the bookkeeping needed to undo later insertions."""
        return (
            self._size,
            len(self.origins),
            list(self._usage),
            [len(m) for m in self._members],
            self._active_from,
            self.num_rejected,
        )

    def rollback(self, checkpoint: tuple) -> None:
        """Discard records, origins and usage changes made after ``checkpoint``."""
        size, n_origins, usage, member_lens, active_from, rejected = checkpoint
        for o in self.origins[n_origins:]:
            del self._origin_lookup[id(o)]
        del self.origins[n_origins:]
        self._members = [m[:k] for m, k in zip(self._members[:n_origins], member_lens)]
        self._usage = usage
        self._size = size
        self._active_from = active_from
        self.num_rejected = rejected

    def _reserve(self, extra: int) -> None:
        need = self._size + extra
        if need <= self._X.shape[0]:
            return
        cap = max(need, 2 * self._X.shape[0], 256)
        X = np.empty((cap, self.dim))
        X[: self._size] = self.X
        lt = np.empty(cap)
        lt[: self._size] = self.log_targets
        oo = np.empty(cap, dtype=np.int64)
        oo[: self._size] = self.origin_of
        self._X, self._log_targets, self._origin_of = X, lt, oo

    def insert(self, X: np.ndarray, log_targets: np.ndarray, origin: Gaussian) -> np.ndarray:
        """Append records drawn from ``origin``; returns their database indices."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        log_targets = np.asarray(log_targets, dtype=float).reshape(-1)
        if X.shape[0] != log_targets.shape[0] or X.shape[1] != self.dim:
            raise ValueError("samples and targets have inconsistent shapes")
        valid = ~np.isnan(log_targets) & (log_targets != np.inf)
        n_bad = int((~valid).sum())
        if n_bad:
            self.num_rejected += n_bad
            logger.warning("dropped %d samples with invalid target values", n_bad)
        X, log_targets = X[valid], log_targets[valid]
        o = self.origin_index(origin)
        n = X.shape[0]
        self._reserve(n)
        idx = np.arange(self._size, self._size + n)
        self._X[idx] = X
        self._log_targets[idx] = log_targets
        self._origin_of[idx] = o
        self._size += n
        self._members[o].extend(idx[np.isfinite(log_targets)].tolist())
        return idx


def insert_samples(
    db: SampleDatabase, X: np.ndarray, log_targets: np.ndarray, origin: Gaussian
) -> np.ndarray:
    """Add records to the database; see :meth:`SampleDatabase.insert`."""
    return db.insert(X, log_targets, origin)


@dataclass
class ActiveSampleSet:
    """Samples used in one iteration, with their background density.

    Attributes:
        indices: Database indices of the samples (deduplicated).
        X: Sample matrix ``(N, D)``.
        log_targets: ``log p~(x)`` per sample.
        origin_ids: Distinct origins that contributed samples.
        origin_counts: How many active samples each origin contributed.
        log_z: Log density of the background mixture at every sample.
        weights: Self-normalized importance weights ``(K, N)``, one row per
            mixture component, once computed.
        n_eff: Effective sample size per component, once computed.
        log_comp: ``log q(x|o)`` as ``(N, K)``, once computed.
    """

    indices: np.ndarray
    X: np.ndarray
    log_targets: np.ndarray
    origin_ids: np.ndarray
    origin_counts: np.ndarray
    log_z: np.ndarray
    weights: np.ndarray | None = None
    n_eff: np.ndarray | None = None
    log_comp: np.ndarray | None = None

    @property
    def num_samples(self) -> int:
        return int(self.indices.shape[0])


def empty_active_set(dim: int) -> ActiveSampleSet:
    return ActiveSampleSet(
        indices=np.empty(0, dtype=np.int64),
        X=np.empty((0, dim)),
        log_targets=np.empty(0),
        origin_ids=np.empty(0, dtype=np.int64),
        origin_counts=np.empty(0, dtype=np.int64),
        log_z=np.empty(0),
    )


def build_active_set(db: SampleDatabase, indices: Sequence[int]) -> ActiveSampleSet:
    """Deduplicate ``indices`` (keeping first occurrence) and evaluate the background mixture."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return empty_active_set(db.dim)
    _, first = np.unique(indices, return_index=True)
    indices = indices[np.sort(first)]
    indices = indices[np.isfinite(db.log_targets[indices])]
    if indices.size == 0:
        return empty_active_set(db.dim)
    X = db.X[indices]
    origins = db.origin_of[indices]
    origin_ids, counts = np.unique(origins, return_counts=True)
    n = indices.size
    log_terms = np.empty((n, origin_ids.size))
    for j, (o, c) in enumerate(zip(origin_ids, counts)):
        log_terms[:, j] = np.log(c / n) + db.origins[o].log_density(X)
    return ActiveSampleSet(
        indices=indices,
        X=X,
        log_targets=db.log_targets[indices].copy(),
        origin_ids=origin_ids,
        origin_counts=counts,
        log_z=fast_logsumexp(log_terms, axis=1),
    )


def reuse_logits(db: SampleDatabase, component: Gaussian, origins: np.ndarray, mode: str) -> np.ndarray:
    """Unnormalized log selection probabilities ``-d(component, origin) - usage``."""
    if mode == "mahalanobis":
        means = np.array([db.origins[i].mean for i in origins])
        neg_d = component.log_density(means)
    elif mode == "reverse_kl":
        neg_d = -np.array([kl_divergence(component, db.origins[i]) for i in origins])
    elif mode == "forward_kl":
        neg_d = -np.array([kl_divergence(db.origins[i], component) for i in origins])
    elif mode == "uniform":
        neg_d = np.zeros(len(origins))
    else:
        raise ValueError(f"unknown dissimilarity {mode!r}; expected one of {DISSIMILARITIES}")
    return neg_d - db.usage[origins]


def sample_without_replacement(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Order in which items are drawn without replacement from ``softmax(logits)``.

    Uses the Gumbel-top-k construction, which has the same distribution as
    drawing one item at a time and renormalizing over the remainder.
    """
    keys = logits + rng.gumbel(size=len(logits))
    return np.argsort(-keys, kind="stable")


def select_samples(
    db: SampleDatabase,
    m: MixtureModel,
    n_reuse: int,
    dissimilarity: str,
    rng: np.random.Generator,
) -> ActiveSampleSet:
    """Pick reusable samples for every component of ``m``.

    For each component, origins are drawn without replacement and all of an
    origin's samples are added until ``n_reuse`` samples have been counted.
    Samples that are already in the set still count. Every drawn origin has
    its usage counter incremented immediately, so later components see the
    updated counts.
    """
    if dissimilarity not in DISSIMILARITIES:
        raise ValueError(f"unknown dissimilarity {dissimilarity!r}")
    origins = db.reusable_origins()
    if origins.size == 0 or n_reuse <= 0:
        return empty_active_set(db.dim)
    chosen: list[int] = []
    in_set: set[int] = set()
    for comp in m.components:
        order = origins[sample_without_replacement(reuse_logits(db, comp, origins, dissimilarity), rng)]
        n_added = 0
        for i in order:
            db.increment_usage(int(i))
            for j in db.members(int(i)):
                if j not in in_set:
                    in_set.add(j)
                    chosen.append(j)
                n_added += 1
                if n_added == n_reuse:
                    break
            if n_added >= n_reuse:
                break
    return build_active_set(db, chosen)


def effective_sample_size(weights: np.ndarray) -> float:
    """``1 / sum(w^2)`` for self-normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def compute_weights(active: ActiveSampleSet, m: MixtureModel) -> ActiveSampleSet:
    """Self-normalized importance weights ``q(x|o) / z(x)`` for every component."""
    if active.num_samples == 0:
        raise ValueError("active sample set is empty")
    log_comp = m.log_component_densities(active.X)
    log_w = (log_comp - active.log_z[:, None]).T
    log_w -= fast_logsumexp(log_w, axis=1, keepdims=True)
    weights = np.exp(log_w)
    n_eff = 1.0 / np.einsum("kn,kn->k", weights, weights)
    return replace(active, weights=weights, n_eff=n_eff, log_comp=log_comp)


def evaluate_target(target: Callable[[np.ndarray], np.ndarray], X: np.ndarray) -> np.ndarray:
    """Evaluate ``target`` on a batch, mapping NaN to ``-inf``."""
    if X.shape[0] == 0:
        return np.empty(0)
    try:
        values = np.asarray(target(X), dtype=float).reshape(-1)
    except TargetEvaluationError:
        raise
    except Exception as err:  # noqa: BLE001 - re-raised with the offending batch
        raise TargetEvaluationError(f"target evaluation failed: {err}", X) from err
    if values.shape[0] != X.shape[0]:
        raise TargetEvaluationError("target returned the wrong number of values", X)
    nan = np.isnan(values)
    if nan.any():
        logger.warning("target returned NaN for %d samples; using -inf", int(nan.sum()))
        values = np.where(nan, -np.inf, values)
    return values


def sample_where_needed(
    db: SampleDatabase,
    active: ActiveSampleSet,
    m: MixtureModel,
    n_des: int,
    target: Callable[[np.ndarray], np.ndarray],
    rng: np.random.Generator | Sequence[np.random.Generator],
) -> tuple[ActiveSampleSet, np.ndarray]:
    """Top up every component to roughly ``n_des`` effective samples.

    Component ``o`` receives ``max(0, n_des - floor(n_eff(o)))`` fresh draws;
    with an empty active set every component receives ``n_des``. All draws
    are evaluated as one batch, stored in the database under their component
    and appended to the active set, whose weights are then recomputed.

    Args:
        rng: One generator shared by all components, or one per component.

    Returns:
        The updated active set (with weights) and the number of new samples
        per component.
    """
    K = m.num_components
    rngs = [rng] * K if isinstance(rng, np.random.Generator) else list(rng)
    if active.num_samples == 0:
        n_new = np.full(K, n_des, dtype=np.int64)
    else:
        if active.n_eff is None:
            active = compute_weights(active, m)
        # the tolerance keeps n_eff = 4.9999999 from counting as 4
        n_new = np.maximum(0, n_des - np.floor(active.n_eff + 1e-9).astype(np.int64))
    draws = [comp.sample(int(k), r) for comp, k, r in zip(m.components, n_new, rngs)]
    X_new = np.concatenate(draws) if draws else np.empty((0, m.dim))
    values = evaluate_target(target, X_new)
    new_idx = []
    start = 0
    for comp, block in zip(m.components, draws):
        stop = start + block.shape[0]
        if stop > start:
            new_idx.append(db.insert(block, values[start:stop], comp))
        start = stop
    if new_idx:
        active = build_active_set(db, np.concatenate([active.indices, *new_idx]))
    if active.num_samples == 0:
        return active, n_new
    return compute_weights(active, m), n_new
