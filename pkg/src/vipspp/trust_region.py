"""KL-constrained update of a Gaussian towards a quadratic reward model.

Maximizes ``E_q[R~(x)] + H(q)`` subject to ``KL(q || current) <= epsilon``.
For a quadratic ``R~`` the solution is Gaussian with natural parameters that
interpolate linearly between the current ones and the surrogate's, with
step size controlled by the Lagrange multiplier ``eta``. The multiplier
minimizes the convex dual

    G(eta) = eta * epsilon + eta * logZ(Q, q) - (eta + 1) * logZ(Q(eta), q(eta)),

whose derivative is ``epsilon - KL(q_eta || current)``.

Log-partition sign convention: the dual above only has that derivative when
``logZ(X, x) = -0.5 * (x^T X^-1 x + log|2 pi X^-1|)``, i.e. the *negated*
standard Gaussian log-normalizer. With the standard sign the finite-difference
derivative of ``G`` disagrees with ``epsilon - KL``; the test suite checks
both conventions against finite differences and the grid-normalized
geometric-mixture density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from vipspp.exceptions import (
    InfeasibleStepError,
    NotPositiveDefiniteError,
    UpdateRejectedError,
)
from vipspp.gaussian import LOG_2PI, Gaussian, from_natural, kl_divergence
from vipspp.surrogate import QuadraticSurrogate

EPSILON_MIN = 1e-2
EPSILON_MAX = 5.0
ETA_MAX = 1e10
ETA_MARGIN = 1e-6


def log_partition(precision: np.ndarray, shift: np.ndarray) -> float:
    """``-0.5 * (q^T Q^-1 q + log|2 pi Q^-1|)`` (sign convention used by the dual)."""
    try:
        chol = linalg.cholesky(precision, lower=True, check_finite=False)
    except linalg.LinAlgError as err:
        raise InfeasibleStepError("precision is not positive definite") from err
    z = linalg.solve_triangular(chol, shift, lower=True, check_finite=False)
    d = shift.shape[0]
    log_det_precision = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (z @ z + d * LOG_2PI - log_det_precision))


def _min_feasible_eta(Q: np.ndarray, R: np.ndarray) -> float:
    """Smallest ``eta >= 0`` with ``eta * Q + R`` positive definite, plus a margin.

    ``Q(eta)`` is PD iff ``eta > -lambda_min`` where ``lambda_min`` is the
    smallest generalized eigenvalue of ``(R, Q)``.
    """
    lam_min = linalg.eigh(R, Q, eigvals_only=True, subset_by_index=[0, 0])[0]
    if lam_min > 0.0:
        return 0.0
    return float(-lam_min * (1.0 + ETA_MARGIN) + ETA_MARGIN * 1e-6)


@dataclass(frozen=True)
class DualProblem:
    """Dual of the KL-constrained Gaussian update.

    Attributes:
        current: Gaussian before the update.
        surrogate: Quadratic reward model.
        epsilon: Bound on ``KL(new || current)``.
        eta_min: Lower end of the feasible step sizes.
    """

    current: Gaussian
    surrogate: QuadraticSurrogate
    epsilon: float
    eta_min: float

    @classmethod
    def build(
        cls, current: Gaussian, surrogate: QuadraticSurrogate, epsilon: float
    ) -> "DualProblem":
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        R = 0.5 * (surrogate.R + surrogate.R.T)
        eta_min = _min_feasible_eta(current.precision, R)
        return cls(current, QuadraticSurrogate(R, surrogate.r, surrogate.offset), epsilon, eta_min)


def interpolate_natural(eta: float, dp: DualProblem) -> tuple[np.ndarray, np.ndarray]:
    """Natural parameters ``(eta Q + R) / (eta + 1)`` and ``(eta q + r) / (eta + 1)``."""
    a = eta / (eta + 1.0)
    b = 1.0 / (eta + 1.0)
    Q = a * dp.current.precision + b * dp.surrogate.R
    q = a * dp.current.shift + b * dp.surrogate.r
    return Q, q


def _interpolated_gaussian(eta: float, dp: DualProblem) -> Gaussian:
    Q, q = interpolate_natural(eta, dp)
    try:
        return from_natural(Q, q)
    except NotPositiveDefiniteError as err:
        raise InfeasibleStepError(f"eta={eta:g} yields an indefinite precision") from err


def dual_value_and_gradient(eta: float, dp: DualProblem) -> tuple[float, float]:
    """Dual objective ``G(eta)`` and its derivative ``epsilon - KL(q_eta || current)``.

    Raises:
        InfeasibleStepError: If ``Q(eta)`` is not positive definite.
    """
    Q, q = interpolate_natural(eta, dp)
    g_eta = _interpolated_gaussian(eta, dp)
    cur = dp.current
    value = (
        eta * dp.epsilon
        + eta * log_partition(cur.precision, cur.shift)
        - (eta + 1.0) * log_partition(Q, q)
    )
    return value, dp.epsilon - kl_divergence(g_eta, cur)


def _kl_at(eta: float, dp: DualProblem) -> float:
    return kl_divergence(_interpolated_gaussian(eta, dp), dp.current)


def solve_eta(dp: DualProblem, eta_max: float = ETA_MAX) -> float:
    """Minimize the dual by bracketing the root of its monotone derivative.

    Returns ``eta_min`` when the least constrained feasible step already
    satisfies the KL bound.

    Raises:
        UpdateRejectedError: If no ``eta <= eta_max`` satisfies the bound.
    """
    eps = dp.epsilon
    lo = dp.eta_min
    # step the lower end up until the interpolated precision factorizes
    kl_lo = None
    for _ in range(200):
        try:
            kl_lo = _kl_at(lo, dp)
            break
        except InfeasibleStepError:
            lo = max(2.0 * lo, 1e-12)
            if lo > eta_max:
                break
    if kl_lo is None:
        raise UpdateRejectedError("no feasible step size found")
    if kl_lo <= eps:
        return lo

    hi = max(1.0, 2.0 * lo)
    while _kl_at(hi, dp) > eps:
        lo = hi
        hi *= 2.0
        if hi > eta_max:
            raise UpdateRejectedError("KL bound not reachable below eta_max")

    def f(log_eta: float) -> float:
        return eps - _kl_at(float(np.exp(log_eta)), dp)

    a = np.log(lo) if lo > 0 else np.log(hi) - 60.0
    if f(a) >= 0:
        return float(np.exp(a))
    b = np.log(hi)
    root = optimize.brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    eta = float(np.exp(root))
    # the constraint must hold; nudge towards the feasible end if the root
    # landed marginally on the wrong side
    if _kl_at(eta, dp) > eps:
        step = max(eta * 1e-12, 1e-300)
        while _kl_at(eta, dp) > eps and eta < np.exp(b):
            eta += step
            step *= 2.0
    return eta


def gva_update(
    current: Gaussian, surrogate: QuadraticSurrogate, epsilon: float
) -> Gaussian:
    """Trust-region update of a Gaussian given a quadratic surrogate.

    Args:
        current: The Gaussian before the update.
        surrogate: Quadratic model of the reward.
        epsilon: Upper bound on ``KL(new || current)``.

    Returns:
        The updated Gaussian.

    Raises:
        UpdateRejectedError: If the surrogate is so indefinite that no step
            size up to ``1e10`` produces a valid Gaussian.
    """
    dp = DualProblem.build(current, surrogate, epsilon)
    eta = solve_eta(dp)
    try:
        return _interpolated_gaussian(eta, dp)
    except InfeasibleStepError as err:
        raise UpdateRejectedError(str(err)) from err


def adapt_kl_bound(
    epsilon: float,
    improved: bool,
    lower: float = EPSILON_MIN,
    upper: float = EPSILON_MAX,
) -> float:
    """Grow the bound by 10% after an improvement, shrink it by 20% otherwise."""
    epsilon = epsilon * 1.1 if improved else epsilon * 0.8
    return float(min(max(epsilon, lower), upper))
