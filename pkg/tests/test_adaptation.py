import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from vipspp.adaptation import (
    AdaptationState,
    add_component,
    candidate_covariances,
    candidate_scores,
    delete_components,
    init_covariance,
    maybe_add_component,
    score_candidates,
    target_entropy,
)
from vipspp.gaussian import gaussian_entropy, make_gaussian
from vipspp.mixture import MixtureModel, mixture_log_density
from vipspp.sample_db import SampleDatabase


def two_component_model():
    return MixtureModel(
        np.array([0.6, 0.4]),
        [make_gaussian(np.array([-3.0, 0.0]), np.eye(2)), make_gaussian(np.array([3.0, 0.0]), 2 * np.eye(2))],
    )


def test_low_density_candidate_wins():
    m = two_component_model()
    db = SampleDatabase(2)
    X = np.array([[-3.0, 0.0], [0.0, 8.0]])
    db.insert(X, np.array([-1.0, -1.0]), m.components[0])
    best, _ = score_candidates(db, m, 1000.0)
    assert best == 1


def test_clamp_identity_on_constructed_cases():
    log_q = np.array([-1.0, -5.0, -40.0, -400.0])
    R = np.array([0.5, -2.0, 3.0, 1.0])
    for delta in (1000.0, 500.0, 200.0, 100.0, 50.0, 10.0):
        scores = candidate_scores(R, log_q, delta)
        clamp = log_q.max() - delta
        for s, r, lq in zip(scores, R, log_q):
            if lq < clamp:
                assert s == r - clamp
            else:
                assert s == r - lq


def test_clamp_identity_through_database():
    m = two_component_model()
    db = SampleDatabase(2)
    X = np.array([[-3.0, 0.0], [3.0, 0.0], [0.0, 30.0], [40.0, -40.0]])
    R = np.array([-2.0, -1.0, -3.0, -0.5])
    db.insert(X, R, m.components[1])
    log_q = mixture_log_density(m, X)
    for delta in (1000.0, 50.0):
        best, score = score_candidates(db, m, delta)
        expected = R - np.maximum(log_q, log_q.max() - delta)
        assert best == int(np.argmax(expected))
        assert score == expected[best]


def test_ties_break_to_lowest_index():
    m = two_component_model()
    db = SampleDatabase(2)
    X = np.array([[0.0, 50.0], [0.0, 50.0], [0.0, 50.0]])
    db.insert(X, np.zeros(3), m.components[0])
    assert score_candidates(db, m, 50.0)[0] == 0


def test_score_shift_invariance(rng):
    m = two_component_model()
    db1, db2 = SampleDatabase(2), SampleDatabase(2)
    X = 5 * rng.standard_normal((40, 2))
    R = rng.standard_normal(40)
    db1.insert(X, R, m.components[0])
    db2.insert(X, R + 123.0, m.components[0])
    assert score_candidates(db1, m, 200.0)[0] == score_candidates(db2, m, 200.0)[0]


def test_score_requires_candidates():
    with pytest.raises(ValueError):
        score_candidates(SampleDatabase(2), two_component_model(), 10.0)


def test_delta_cycle_order():
    state = AdaptationState()
    seq = [state.next_delta() for _ in range(7)]
    assert seq == [1000.0, 500.0, 200.0, 100.0, 50.0, 1000.0, 500.0]


def test_target_entropy_examples():
    g = make_gaussian(np.zeros(2), random_spd(np.random.default_rng(0), 2))
    assert target_entropy(MixtureModel(np.ones(1), [g])) == g.entropy()
    h = make_gaussian(np.ones(2), g.cov)
    np.testing.assert_allclose(target_entropy(MixtureModel(np.array([0.9, 0.1]), [g, h])), g.entropy(), rtol=1e-14)
    g2 = make_gaussian(np.zeros(2), 5 * np.eye(2))
    m = MixtureModel(np.array([1 - 1e-6, 1e-6]), [g, g2])
    assert abs(target_entropy(m) - g.entropy()) <= 1e-5 * abs(g2.entropy() - g.entropy())


def test_constant_target_picks_isotropic(rng):
    m = MixtureModel(np.ones(1), [make_gaussian(np.zeros(2), np.array([[4.0, 1.5], [1.5, 1.0]]))])
    H = target_entropy(m)
    iso, _ = candidate_covariances(m, np.ones(2), H)
    cov = init_covariance(m, np.ones(2), H, lambda X: np.zeros(len(X)), SampleDatabase(2), rng)
    np.testing.assert_allclose(cov, iso, rtol=1e-14)


def test_single_component_average_covariance():
    cov = np.array([[4.0, 1.5], [1.5, 1.0]])
    m = MixtureModel(np.ones(1), [make_gaussian(np.zeros(2), cov)])
    H = 1.0
    iso, avg = candidate_covariances(m, np.array([5.0, 5.0]), H)
    c = np.sqrt(avg[0, 0] / cov[0, 0]) ** 2
    np.testing.assert_allclose(avg, c * cov, rtol=1e-12)
    np.testing.assert_allclose(gaussian_entropy(avg), H, atol=1e-10)
    np.testing.assert_allclose(gaussian_entropy(iso), H, atol=1e-10)
    np.testing.assert_allclose(iso, iso[0, 0] * np.eye(2), rtol=1e-14)


def test_line_search_samples_go_to_database(rng):
    m = two_component_model()
    db = SampleDatabase(2)
    init_covariance(m, np.zeros(2), target_entropy(m), lambda X: -np.sum(X**2, 1), db, rng)
    assert len(db) == 20 and db.num_origins == 2


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4))
def test_line_search_entropy_at_least_target(seed, d):
    rng = np.random.default_rng(seed)
    comps = [make_gaussian(rng.standard_normal(d), random_spd(rng, d)) for _ in range(3)]
    m = MixtureModel(rng.dirichlet(np.ones(3)), comps)
    H = target_entropy(m)
    iso, avg = candidate_covariances(m, rng.standard_normal(d), H)
    for a in np.linspace(0, 1, 11):
        assert gaussian_entropy(a * iso + (1 - a) * avg) >= H - 1e-8
    cov = init_covariance(m, rng.standard_normal(d), H, lambda X: -np.sum(X**2, 1), SampleDatabase(d), rng)
    assert gaussian_entropy(cov) >= H - 1e-8


def test_no_addition_off_schedule(rng):
    m = two_component_model()
    db = SampleDatabase(2)
    db.insert(rng.standard_normal((5, 2)), np.zeros(5), m.components[0])
    state = AdaptationState(add_rate=30)
    out = maybe_add_component(m, state, db, lambda X: np.zeros(len(X)), 15, rng)
    assert out is m
    assert maybe_add_component(m, state, db, lambda X: np.zeros(len(X)), 0, rng) is m


def test_addition_is_negligible_far_away(rng):
    m = two_component_model()
    db = SampleDatabase(2)
    db.insert(np.array([[30.0, 30.0], [0.0, 0.0]]), np.array([0.0, -100.0]), m.components[0])
    state = AdaptationState(add_rate=30, next_uid=2)
    out = maybe_add_component(m, state, db, lambda X: -0.01 * np.sum(X**2, 1), 30, rng)
    assert out.num_components == 3
    np.testing.assert_allclose(out.weights.sum(), 1.0, atol=1e-15)
    assert out.weights[-1] == 1e-29
    np.testing.assert_array_equal(out.components[-1].mean, [30.0, 30.0])
    assert out.states[-1].uid == 2 and state.next_uid == 3
    ref = np.array([[-3.0, 0.5], [3.0, -1.0]])
    old, new = mixture_log_density(m, ref), mixture_log_density(out, ref)
    assert np.all(np.abs(new - old) <= 1e-12 * np.abs(old))


def test_negligible_impact_guarantee(rng):
    m = two_component_model()
    new_comp = make_gaussian(np.array([0.0, 3.0]), 0.01 * np.eye(2))
    out = add_component(m, new_comp, AdaptationState())
    X = np.vstack([new_comp.mean, 4 * rng.standard_normal((200, 2))])
    old = mixture_log_density(m, X)
    keep = old >= old.max() - 200
    new = mixture_log_density(out, X)
    assert np.all(np.abs(new[keep] - old[keep]) <= 1e-12 * np.maximum(np.abs(old[keep]), 1.0))


def low_weight_model(reward_fn):
    m = MixtureModel(
        np.array([1 - 1e-7, 1e-7]),
        [make_gaussian(np.zeros(1), np.eye(1)), make_gaussian(np.ones(1), np.eye(1))],
    )
    return m


def run_deletion(m, state, rewards):
    for r in rewards:
        m.states[1].reward = r
        m = delete_components(m, state)
        if m.num_components == 1:
            break
    return m


def test_deleted_after_ten_stagnant_iterations():
    state = AdaptationState()
    m = run_deletion(low_weight_model(None), state, [-5.0] * 9 + [-5.5])
    assert m.num_components == 1
    np.testing.assert_allclose(m.weights, [1.0])


def test_retained_after_nine_iterations():
    m = run_deletion(low_weight_model(None), AdaptationState(), [-5.0] * 9)
    assert m.num_components == 2


def test_improving_reward_resets_streak():
    rewards = [-5.0] * 5 + [-4.0] + [-4.0] * 8
    m = run_deletion(low_weight_model(None), AdaptationState(), rewards)
    assert m.num_components == 2


def test_single_component_never_deleted():
    m = MixtureModel(np.ones(1), [make_gaussian(np.zeros(1), np.eye(1))])
    state = AdaptationState(min_weight=2.0)
    for _ in range(20):
        m = delete_components(m, state)
    assert m.num_components == 1


def test_deletion_preserves_simplex(rng):
    k = 6
    w = np.full(k, 1e-6)
    w[:2] = [0.6, 0.4 - 4e-6]
    m = MixtureModel(w, [make_gaussian(rng.standard_normal(2), np.eye(2)) for _ in range(k)])
    state = AdaptationState()
    for _ in range(10):
        m = delete_components(m, state)
    assert m.num_components == 2
    assert abs(m.weights.sum() - 1.0) <= 1e-12
