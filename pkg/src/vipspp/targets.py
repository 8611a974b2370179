"""Unnormalized target densities.

Every target is a :class:`TargetDistribution`: calling it on an ``(N, D)``
batch returns ``log p~(x)`` and increments the evaluation counter by ``N``.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_expit, logsumexp

from vipspp.exceptions import DimensionMismatchError, TargetEvaluationError
from vipspp.gaussian import Gaussian, make_gaussian

logger = logging.getLogger(__name__)


class TargetDistribution:
    """Batched unnormalized log density with an evaluation counter.

    Args:
        dim: Input dimension.
        log_density_fn: Function mapping an ``(N, D)`` batch to ``N`` values.
        sampler: Optional exact sampler ``(n, rng) -> (n, D)``.
        name: Label used in logs and output files.
    """

    def __init__(
        self,
        dim: int,
        log_density_fn: Callable[[np.ndarray], np.ndarray],
        sampler: Callable[[int, np.random.Generator], np.ndarray] | None = None,
        name: str = "target",
    ):
        self.dim = dim
        self.name = name
        self._fn = log_density_fn
        self._sampler = sampler
        self._lock = threading.Lock()
        self.num_evaluations = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.log_density(X)

    def log_density(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected {self.dim} columns, got {X.shape[1]}")
        with self._lock:
            self.num_evaluations += X.shape[0]
        values = np.asarray(self._fn(X), dtype=float).reshape(-1)
        nan = np.isnan(values)
        if nan.any():
            logger.warning("%s returned NaN for %d inputs; using -inf", self.name, int(nan.sum()))
            values = np.where(nan, -np.inf, values)
        return values

    @property
    def has_sampler(self) -> bool:
        return self._sampler is not None

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self._sampler is None:
            raise NotImplementedError(f"{self.name} has no exact sampler")
        return self._sampler(n, rng)


class GmmTarget(TargetDistribution):
    """Equal-weight Gaussian mixture target with known components."""

    def __init__(self, means: np.ndarray, covs: Sequence[np.ndarray], name: str = "gmm"):
        self.components: list[Gaussian] = [make_gaussian(m, c) for m, c in zip(means, covs)]
        self.means = np.array([c.mean for c in self.components])
        self.covs = [c.cov for c in self.components]
        k = len(self.components)
        self.log_weights = np.full(k, -np.log(k))
        super().__init__(self.means.shape[1], self._log_density, self._sample, name)

    def _log_density(self, X: np.ndarray) -> np.ndarray:
        logs = np.stack([c.log_density(X) for c in self.components], axis=1)
        return logsumexp(logs + self.log_weights, axis=1)

    def _sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.integers(len(self.components), size=n)
        X = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            X[idx] = comp.sample(idx.size, rng)
        return X


def make_gmm_target(dim: int, num_components: int, rng: np.random.Generator) -> GmmTarget:
    """Random mixture with means in ``[-50, 50]^D`` and covariances ``A^T A + I``.

    Entries of ``A`` are normal with standard deviation ``0.1 * D``.
    """
    if dim < 1 or num_components < 1:
        raise ValueError("dimension and number of components must be positive")
    means = rng.uniform(-50.0, 50.0, size=(num_components, dim))
    covs = []
    for _ in range(num_components):
        A = rng.normal(0.0, 0.1 * dim, size=(dim, dim))
        covs.append(A.T @ A + np.eye(dim))
    return GmmTarget(means, covs, name=f"gmm{dim}d")


def gaussian_target(mean: np.ndarray, cov: np.ndarray) -> GmmTarget:
    """Single Gaussian target (a one-component :class:`GmmTarget`)."""
    return GmmTarget(np.atleast_2d(mean), [np.atleast_2d(cov)], name="gaussian")


NUM_LINKS = 10
PRIOR_VARIANCES = np.array([1.0] + [4e-2] * (NUM_LINKS - 1))
CART_VARIANCE = 1e-4
ONE_GOAL = np.array([[7.0, 0.0]])
FOUR_GOALS = np.array([[7.0, 0.0], [0.0, 7.0], [-7.0, 0.0], [0.0, -7.0]])


def forward_kinematics(theta: np.ndarray) -> np.ndarray:
    """End-effector position of a planar arm with ten unit-length links.

    Accepts a single configuration (returns ``(2,)``) or a batch ``(N, 10)``
    (returns ``(N, 2)``).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != NUM_LINKS:
        raise DimensionMismatchError(f"expected {NUM_LINKS} joint angles, got {theta.shape[-1]}")
    angles = np.cumsum(theta, axis=-1)
    return np.stack([np.cos(angles).sum(axis=-1), np.sin(angles).sum(axis=-1)], axis=-1)


def _diag_gaussian_logpdf(X: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum((X - mean) ** 2 / var + np.log(2.0 * np.pi * var), axis=-1)


def planar_robot_target(num_goals: int = 1) -> TargetDistribution:
    """Posterior over joint angles of a planar arm reaching one or four goals.

    A zero-mean Gaussian prior (variance 1 for the first joint, 0.04 for the
    others) is multiplied by an isotropic Gaussian likelihood (variance 1e-4)
    on the end-effector position; with four goals the likelihood is the
    maximum over the goals.
    """
    if num_goals not in (1, 4):
        raise ValueError("num_goals must be 1 or 4")
    goals = ONE_GOAL if num_goals == 1 else FOUR_GOALS
    cart_var = np.full(2, CART_VARIANCE)

    def log_density(theta: np.ndarray) -> np.ndarray:
        prior = _diag_gaussian_logpdf(theta, 0.0, PRIOR_VARIANCES)
        ee = forward_kinematics(theta)
        lik = np.stack([_diag_gaussian_logpdf(ee, g, cart_var) for g in goals], axis=1)
        return prior + lik.max(axis=1)

    target = TargetDistribution(NUM_LINKS, log_density, name=f"planar{num_goals}")
    target.goals = goals
    return target


def logistic_regression_target(
    num_data: int,
    dim: int,
    rng: np.random.Generator,
    prior_variance: float = 100.0,
    weight_norm: float = 3.0,
    label_noise: float = 0.05,
) -> TargetDistribution:
    """Bayesian logistic regression posterior on synthetic standardized data.

    Features are standard normal and then standardized per column; labels
    come from a hidden weight vector of norm ``weight_norm`` with a fraction
    ``label_noise`` flipped.
    """
    if num_data < 1 or dim < 1:
        raise ValueError("num_data and dim must be positive")
    features = rng.standard_normal((num_data, dim))
    if num_data > 1:
        std = features.std(axis=0)
        features = (features - features.mean(axis=0)) / np.where(std > 0, std, 1.0)
    w_true = rng.standard_normal(dim)
    w_true *= weight_norm / np.linalg.norm(w_true)
    labels = (features @ w_true > 0).astype(float)
    flip = rng.random(num_data) < label_noise
    labels[flip] = 1.0 - labels[flip]
    signs = 2.0 * labels - 1.0
    signed = features * signs[:, None]

    def log_density(W: np.ndarray) -> np.ndarray:
        lik = log_expit(W @ signed.T).sum(axis=1)
        prior = _diag_gaussian_logpdf(W, 0.0, np.full(dim, prior_variance))
        return lik + prior

    target = TargetDistribution(dim, log_density, name=f"logreg{dim}d")
    target.features, target.labels, target.true_weights = features, labels, w_true
    return target


class ExternalTarget(TargetDistribution):
    """Target served by a child process over a line protocol.

    Each request is one line ``<id> <x_1> ... <x_D>`` written to the child's
    stdin; the child answers with one line ``<id> <log density>`` on stdout.
    Values are plain decimal text (``-inf`` and ``nan`` allowed). Requests
    of a batch are written before the responses are read, so the child may
    answer them in any order.

    Args:
        command: Command line that starts the child process.
        dim: Input dimension.
    """

    def __init__(self, command: str | Sequence[str], dim: int):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc = subprocess.Popen(
            args,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._next_id = 0
        self._io_lock = threading.Lock()
        super().__init__(dim, self._query, name="external")

    def _query(self, X: np.ndarray) -> np.ndarray:
        with self._io_lock:
            ids = list(range(self._next_id, self._next_id + X.shape[0]))
            self._next_id += X.shape[0]
            lines = [f"{i} " + " ".join(repr(float(v)) for v in x) for i, x in zip(ids, X)]
            write_errors: list[OSError] = []

            def write_all():
                try:
                    self._proc.stdin.write("\n".join(lines) + "\n")
                    self._proc.stdin.flush()
                except OSError as err:
                    write_errors.append(err)

            # write from a thread so a child that answers eagerly cannot
            # deadlock on a full stdout pipe
            writer = threading.Thread(target=write_all, daemon=True)
            writer.start()
            try:
                answers: dict[int, float] = {}
                while len(answers) < len(ids):
                    line = self._proc.stdout.readline()
                    if not line:
                        raise TargetEvaluationError("external target closed its output", X)
                    rid, value = line.split()
                    answers[int(rid)] = float(value)
            except (OSError, ValueError) as err:
                raise TargetEvaluationError(f"external target protocol error: {err}", X) from err
            finally:
                writer.join(timeout=5)
            if write_errors:
                raise TargetEvaluationError(f"external target write failed: {write_errors[0]}", X)
        try:
            return np.array([answers[i] for i in ids])
        except KeyError as err:
            raise TargetEvaluationError(f"missing response for request {err}", X) from err

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)

    def __enter__(self) -> "ExternalTarget":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
