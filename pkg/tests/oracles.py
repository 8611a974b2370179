"""Independent numerical oracles shared by unit and acceptance tests."""

import numpy as np

from conftest import random_spd
from vipspp.gaussian import make_gaussian
from vipspp.surrogate import QuadraticSurrogate


def grid_oracle_update(mu, var, R, r, eps, num_points=8001, iterations=60):
    """One-dimensional constrained update computed by quadrature on a grid.

    The tilted density ``(q^eta * exp(-R x^2 / 2 + r x))^(1 / (eta + 1))`` is
    normalized numerically, its KL to ``q`` is evaluated from grid moments,
    and ``eta`` is found by bisection in log space. Nothing is shared with
    the package implementation.
    """
    sd = np.sqrt(var)
    x = np.linspace(mu - 40 * sd, mu + 40 * sd, num_points)
    log_q = -0.5 * (x - mu) ** 2 / var - 0.5 * np.log(2 * np.pi * var)
    log_r = -0.5 * R * x**2 + r * x

    def moments(eta):
        log_p = (eta * log_q + log_r) / (eta + 1)
        p = np.exp(log_p - log_p.max())
        p /= np.trapezoid(p, x)
        m = np.trapezoid(x * p, x)
        v = np.trapezoid((x - m) ** 2 * p, x)
        return m, v

    def kl(eta):
        m, v = moments(eta)
        return 0.5 * (v / var + (m - mu) ** 2 / var - 1 + np.log(var / v))

    # smallest eta with a proper tilted density: eta / var + R > 0
    lo = max(0.0, -R * var) * (1 + 1e-6) + 1e-12
    if kl(lo) <= eps:
        return moments(lo)
    hi = max(1.0, 2 * lo)
    while kl(hi) > eps:
        hi *= 2
    for _ in range(iterations):
        mid = np.sqrt(lo * hi)
        if kl(mid) > eps:
            lo = mid
        else:
            hi = mid
    return moments(hi)


def random_1d_instance(rng):
    """Random (mean, variance, surrogate curvature, linear term, bound)."""
    mu, var = rng.normal(0, 2), rng.uniform(0.2, 3)
    R = rng.uniform(-0.5 / var, 4)
    r = rng.normal(0, 3)
    eps = rng.uniform(0.05, 1.0)
    return mu, var, R, r, eps


def random_instance(rng, d, indefinite=False):
    """Random current Gaussian and quadratic surrogate, optionally with indefinite curvature."""
    cur = make_gaussian(rng.standard_normal(d), random_spd(rng, d))
    R = random_spd(rng, d, scale=rng.uniform(0.1, 5.0))
    if indefinite:
        R = R - rng.uniform(0.0, 2.0) * np.eye(d)
    r = rng.standard_normal(d) * rng.uniform(0.1, 5.0)
    return cur, QuadraticSurrogate(R, r)
