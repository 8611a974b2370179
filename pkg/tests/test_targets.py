import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from vipspp.exceptions import DimensionMismatchError, TargetEvaluationError
from vipspp.mixture import MixtureModel, mixture_log_density
from vipspp.targets import (
    ExternalTarget,
    TargetDistribution,
    forward_kinematics,
    gaussian_target,
    logistic_regression_target,
    make_gmm_target,
    planar_robot_target,
)


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6), k=st.integers(1, 5))
def test_gmm_construction(seed, d, k):
    t = make_gmm_target(d, k, np.random.default_rng(seed))
    assert t.means.shape == (k, d)
    assert np.all(np.abs(t.means) <= 50.0)
    for c in t.covs:
        np.testing.assert_array_equal(c, c.T)
        assert np.linalg.eigvalsh(c).min() >= 1.0 - 1e-9


def test_gmm_deterministic():
    a = make_gmm_target(3, 4, np.random.default_rng(5))
    b = make_gmm_target(3, 4, np.random.default_rng(5))
    np.testing.assert_array_equal(a.means, b.means)
    for ca, cb in zip(a.covs, b.covs):
        np.testing.assert_array_equal(ca, cb)
    X = np.random.default_rng(0).normal(0, 30, (50, 3))
    np.testing.assert_array_equal(a(X), b(X))
    np.testing.assert_array_equal(a(X), a(X))


def test_gmm_matches_mixture_density(rng):
    t = make_gmm_target(3, 5, np.random.default_rng(1))
    m = MixtureModel(np.full(5, 0.2), t.components)
    X = np.vstack([t.sample(200, rng), rng.uniform(-60, 60, (100, 3))])
    np.testing.assert_allclose(t(X), mixture_log_density(m, X), rtol=1e-12, atol=1e-12)


def test_gmm_density_against_scipy(rng):
    t = make_gmm_target(2, 3, np.random.default_rng(2))
    X = rng.uniform(-50, 50, (20, 2))
    logs = np.stack([multivariate_normal(m, c).logpdf(X) for m, c in zip(t.means, t.covs)])
    ref = logsumexp(logs, axis=0) - np.log(3)
    np.testing.assert_allclose(t(X), ref, rtol=1e-10)


def test_gmm_sampler_moments():
    t = gaussian_target(np.array([1.0, -2.0]), np.array([[2.0, 0.5], [0.5, 1.0]]))
    X = t.sample(200000, np.random.default_rng(0))
    np.testing.assert_allclose(X.mean(0), [1.0, -2.0], atol=0.02)
    np.testing.assert_allclose(np.cov(X.T), t.covs[0], atol=0.03)


def test_counter_sums_batch_sizes(rng):
    t = make_gmm_target(2, 2, rng)
    for n in (1, 7, 30):
        t(rng.standard_normal((n, 2)))
    assert t.num_evaluations == 38


def test_dimension_checked():
    t = gaussian_target(np.zeros(2), np.eye(2))
    with pytest.raises(DimensionMismatchError):
        t(np.zeros((3, 3)))


def test_nan_becomes_minus_inf():
    t = TargetDistribution(1, lambda X: np.where(X[:, 0] > 0, np.nan, 0.0))
    np.testing.assert_array_equal(t(np.array([[1.0], [-1.0]])), [-np.inf, 0.0])


def test_forward_kinematics_examples():
    th = np.zeros(10)
    np.testing.assert_array_equal(forward_kinematics(th), [10.0, 0.0])
    th[0] = np.pi / 2
    np.testing.assert_allclose(forward_kinematics(th), [0.0, 10.0], atol=1e-12)
    th[0] = np.pi
    np.testing.assert_allclose(forward_kinematics(th), [-10.0, 0.0], atol=1e-12)
    with pytest.raises(DimensionMismatchError):
        forward_kinematics(np.zeros(9))


def test_forward_kinematics_batch(rng):
    th = rng.standard_normal((5, 10))
    batch = forward_kinematics(th)
    for row, x in zip(th, batch):
        angles = np.cumsum(row)
        np.testing.assert_allclose(x, [np.cos(angles).sum(), np.sin(angles).sum()], rtol=1e-13)


def test_planar_density_at_zero():
    prior = multivariate_normal(np.zeros(10), np.diag([1.0] + [4e-2] * 9)).logpdf(np.zeros(10))
    lik = multivariate_normal([7.0, 0.0], 1e-4 * np.eye(2)).logpdf([10.0, 0.0])
    np.testing.assert_allclose(planar_robot_target(1)(np.zeros((1, 10)))[0], prior + lik, rtol=1e-12)


def test_planar_mirror_symmetry(rng):
    t = planar_robot_target(1)
    th = 0.3 * rng.standard_normal((50, 10))
    np.testing.assert_allclose(t(th), t(-th), rtol=1e-12)


def test_four_goals_dominate():
    # zigzag arm whose links alternate at +-phi around the y axis reaches (0, 7)
    phi = np.arccos(0.7)
    th = np.array([np.pi / 2 + phi] + [(-2 * phi) * (-1) ** k for k in range(9)])
    np.testing.assert_allclose(forward_kinematics(th), [0.0, 7.0], atol=1e-12)
    assert planar_robot_target(4)(th[None])[0] >= planar_robot_target(1)(th[None])[0]
    X = 0.1 * np.random.default_rng(0).standard_normal((20, 10))
    assert np.all(planar_robot_target(4)(X) >= planar_robot_target(1)(X))


def test_planar_rejects_goal_count():
    with pytest.raises(ValueError):
        planar_robot_target(2)


def test_logreg_at_zero():
    t = logistic_regression_target(37, 4, np.random.default_rng(0))
    prior = multivariate_normal(np.zeros(4), 100 * np.eye(4)).logpdf(np.zeros(4))
    np.testing.assert_allclose(t(np.zeros((1, 4)))[0] - prior, 37 * np.log(0.5), rtol=1e-14)


def test_logreg_standardized_features():
    t = logistic_regression_target(200, 3, np.random.default_rng(1))
    np.testing.assert_allclose(t.features.mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(t.features.std(0), 1.0, rtol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(t.true_weights), 3.0, rtol=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_logreg_finite_and_ray_decrease(seed):
    rng = np.random.default_rng(seed)
    t = logistic_regression_target(20, 3, np.random.default_rng(0))
    W = rng.normal(0, 50, (10, 3))
    assert np.all(np.isfinite(t(W)))
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    radii = np.array([100.0, 200.0, 400.0, 800.0])
    vals = t(radii[:, None] * u)
    assert np.all(np.diff(vals) < 0)


CHILD = textwrap.dedent(
    """
    import sys
    pending = []
    for line in sys.stdin:
        parts = line.split()
        x = [float(v) for v in parts[1:]]
        value = -0.5 * sum(v * v for v in x)
        if x[0] > 100:
            value = float("nan")
        pending.append((parts[0], value))
        if len(pending) == 3:
            # answer in reverse order to exercise id matching
            for rid, v in reversed(pending):
                print(rid, repr(v), flush=True)
            pending = []
    for rid, v in pending:
        print(rid, repr(v), flush=True)
    """
)


@pytest.fixture
def child_script(tmp_path):
    path = tmp_path / "child.py"
    path.write_text(CHILD)
    return path


def test_external_target_protocol(child_script, rng):
    X = rng.standard_normal((6, 2))
    with ExternalTarget([sys.executable, str(child_script)], 2) as t:
        np.testing.assert_allclose(t(X), -0.5 * np.sum(X**2, 1), rtol=1e-15)
        X2 = np.array([[200.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_array_equal(t(X2), [-np.inf, -1.0, 0.0])
        assert t.num_evaluations == 9


def test_external_target_crash(tmp_path):
    path = tmp_path / "dead.py"
    path.write_text("import sys\nsys.stdin.readline()\n")
    t = ExternalTarget([sys.executable, str(path)], 1)
    with pytest.raises(TargetEvaluationError):
        t(np.zeros((2, 1)))
    t.close()
