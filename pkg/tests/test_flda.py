import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eventseg import flda
from eventseg._nn import nearest_neighbor_index
from eventseg.errors import ClassStarvationError, ConfigError
from eventseg.labels import EXCLUDED

from oracles import nn_agreement


def two_class(rng, n=200, shift=(2.0, 1.0)):
    y = rng.integers(0, 2, n)
    y[:2], y[2:4] = 0, 1
    cov = [[1.0, 0.6], [0.6, 2.0]]
    X = rng.multivariate_normal([0, 0], cov, n) + np.outer(y, shift)
    return X, y


def test_identity_scatter_direction():
    c = np.array([[-1, 0], [1, 0], [0, 1], [0, -1]], dtype=float)
    X = np.vstack([c, c + [1, 0]])
    y = np.repeat([0, 1], 4)
    w = flda.fisher_weights(X, y, ridge=0.0)
    assert abs(w[1]) < 1e-12 and w[0] > 0


def test_weights_beat_random_directions():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X, y = two_class(rng)
        J = flda.fisher_criterion(flda.fisher_weights(X, y, ridge=0.0), X, y)
        angles = rng.uniform(0, 2 * np.pi, 10_000)
        V = np.column_stack([np.cos(angles), np.sin(angles)])
        z = X @ V.T
        z0, z1 = z[y == 0], z[y == 1]
        zbar = z.mean(axis=0)
        num = (z1.mean(0) - zbar) ** 2 + (z0.mean(0) - zbar) ** 2
        den = ((z1 - z1.mean(0)) ** 2).sum(0) + ((z0 - z0.mean(0)) ** 2).sum(0)
        assert J >= (num / den).max() * (1 - 1e-12)


def test_stationarity_condition(rng):
    X, y = two_class(rng, 100)
    w = flda.fisher_weights(X, y, ridge=0.0)
    S = flda.within_class_scatter(X, y)
    d = X[y == 1].mean(0) - X[y == 0].mean(0)
    np.testing.assert_allclose(S @ w, d, rtol=1e-8)


def test_equal_means_flagged():
    X = np.array([[0.0, 1], [0, -1], [0, 1], [0, -1]])
    with pytest.warns(flda.DegenerateDirectionWarning):
        w = flda.fisher_weights(X, np.array([0, 0, 1, 1]))
    assert np.linalg.norm(w) < 1e-12


def test_singleton_class_starves():
    with pytest.raises(ClassStarvationError):
        flda.fisher_weights(np.zeros((3, 2)), np.array([0, 0, 1]))


def test_rule_agrees_with_symbolic_evaluation():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m0, m1 = rng.normal(0, 3, 2)
        v0, v1 = rng.uniform(0.1, 5, 2)
        gamma = rng.uniform(0.2, 5)
        z = rng.normal(0, 5)
        lhs = (z - m0) ** 2 / v0 - (z - m1) ** 2 / v1
        rhs = np.log(gamma) + np.log(v1) - np.log(v0)
        if abs(lhs - rhs) < 1e-9:
            continue
        state = flda.FldaState(np.array([1.0]), (m0, m1), (v0, v1), gamma)
        assert flda.project_classify(state, np.array([z])) == int(lhs > rhs)


def test_rule_examples():
    eq = flda.FldaState(np.array([1.0]), (0.0, 4.0), (1.0, 1.0))
    assert flda.project_classify(eq, np.array([2.01])) == 1
    assert flda.project_classify(eq, np.array([1.99])) == 0
    assert flda.project_classify(eq, np.array([4.0])) == 1
    uneq = flda.FldaState(np.array([1.0]), (0.0, 4.0), (1.0, 4.0))
    # 1.5^2 - 2.5^2/4 = 0.6875 < log 4
    assert flda.project_classify(uneq, np.array([1.5])) == 0


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_labels_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    X, y = two_class(rng, 60)
    a = flda.project_classify(flda.fit_state(X, y), X)
    b = flda.project_classify(flda.fit_state(c * X, y), c * X)
    assert np.mean(a != b) <= 1 / 60  # boundary points may flip by rounding


def test_si_matches_recount():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        X = np.round(rng.normal(size=(n, 2)), 1)  # rounding forces ties
        y = rng.integers(0, 2, n)
        w = rng.normal(size=2)
        k = int(rng.integers(1, n))
        si = flda.separability_index(X[:k], y[:k], X[k:], y[k:], w)
        assert si == nn_agreement(X @ w, y)


def test_nn_ties_go_to_lowest_index():
    assert nearest_neighbor_index([0.0, 1.0, 2.0]).tolist() == [1, 0, 1]
    assert nearest_neighbor_index([5.0, 5.0, 5.0]).tolist() == [1, 0, 0]


def test_si_separable_construction():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(0, 0.5, (100, 2)), rng.normal(10, 0.5, (100, 2))])
    y = np.repeat([0, 1], 100)
    w = flda.fisher_weights(X, y)
    assert flda.separability_index(X[::2], y[::2], X[1::2], y[1::2], w) == 1.0


def test_si_non_separable_construction():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    y = rng.permutation(np.repeat([0, 1], 100))
    si = flda.separability_index(X[:100], y[:100], X[100:], y[100:], np.array([1.0, 0.5]))
    assert 0.37 <= si <= 0.57


def test_si_single_label():
    assert flda.separability_index(np.ones((3, 1)), [1, 1, 1], np.zeros((2, 1)), [1, 1], [1.0]) == 1.0


def stream(rng, hours=120, step=1 / 6, flip=0.0):
    t = np.arange(0, hours, step)
    truth = ((t % 24) >= 16).astype(int)
    X = np.column_stack([np.where(truth == 1, 58.0, 78.0), np.where(truth == 1, -3.0, -1.0)])
    X += rng.normal(size=X.shape) * [4, 0.3]
    X[:, 0] += flip * np.maximum(t - 36, 0)
    return t, X, truth


def test_self_train_on_stationary_stream(rng):
    t, X, truth = stream(rng)
    sched = flda.AdaptationSchedule.hourly(unit=1.0)
    base = t < 36
    res = flda.gradual_self_train(t, X, truth[base], sched)
    post = ~base
    assert np.mean(res.labels.labels[post] == truth[post]) >= 0.99
    np.testing.assert_array_equal(res.labels.labels[base], truth[base])
    assert all(b.source == "flda" for b in res.batches)
    assert len(res.batches) == int(np.ceil((t[-1] - 36 + 1e-9) / 3))


def test_self_train_deterministic(rng):
    t, X, truth = stream(rng, 80)
    sched = flda.AdaptationSchedule.hourly(unit=1.0)
    a = flda.gradual_self_train(t, X, truth[t < 36], sched)
    b = flda.gradual_self_train(t, X, truth[t < 36], sched)
    np.testing.assert_array_equal(a.labels.labels, b.labels.labels)
    assert [x.chosen_d for x in a.batches] == [x.chosen_d for x in b.batches]


def test_tie_break_choice(rng):
    t, X, truth = stream(rng, 60)
    X = X + 40 * truth[:, None] * [-1, -1]  # fully separable: every window ties at SI = 1
    sched = flda.AdaptationSchedule.hourly(unit=1.0)
    big = flda.gradual_self_train(t, X, truth[t < 36], sched, tie_break="largest")
    small = flda.gradual_self_train(t, X, truth[t < 36], sched, tie_break="smallest")
    # windows longer than the record are clipped at t=0, so they all tie too
    assert big.batches[0].chosen_d == 60.0
    # [24, 36) holds no sleep, so 13 h is the shortest usable window
    assert small.batches[0].chosen_d == 13.0


def test_all_class0_batches_do_not_starve(rng):
    t, X, truth = stream(rng, 60)
    wake = truth == 0
    t, X, truth = t[(t < 36) | wake], X[(t < 36) | wake], truth[(t < 36) | wake]
    sched = flda.AdaptationSchedule.hourly(unit=1.0)
    res = flda.gradual_self_train(t, X, truth[t < 36], sched)
    assert np.all(res.labels.labels[t >= 36] == 0)
    assert all(b.source == "flda" for b in res.batches)


def test_single_class_baseline_starves(rng):
    sched = flda.AdaptationSchedule(36.0, 3.0, [12.0])
    t, X, truth = stream(rng, 60)
    one = np.zeros(int((t < 36).sum()), dtype=int)
    with pytest.raises(ClassStarvationError):
        flda.gradual_self_train(t, X, one, sched)


def test_carry_forward_warning():
    sched = flda.AdaptationSchedule(24.0, 3.0, [12.0])
    t = np.arange(0, 40, 0.5)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(t.size, 2))
    base = ((t[t < 24] % 6) < 3).astype(int)
    X[: base.size] += 5 * base[:, None]
    X[t >= 24] += 5  # everything afterwards looks like class 1
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = flda.gradual_self_train(t, X, base, sched)
    sources = [b.source for b in res.batches]
    assert "carried-forward" in sources
    assert any(issubclass(w.category, flda.CarryForwardWarning) for w in caught)


def test_short_baseline_is_config_error():
    sched = flda.AdaptationSchedule(10.0, 3.0, [12.0])
    t = np.arange(0, 20, 1.0)
    with pytest.raises(ConfigError):
        flda.gradual_self_train(t, np.zeros((20, 1)), np.zeros(10, dtype=int), sched)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        flda.AdaptationSchedule(36, 3, [])
    with pytest.raises(ConfigError):
        flda.AdaptationSchedule(36, 3, [24, 12])
    with pytest.raises(ConfigError):
        flda.AdaptationSchedule(36, 3, [2])


def test_replay_applies_committed_states(rng):
    t, X, truth = stream(rng, 90)
    sched = flda.AdaptationSchedule.hourly(unit=1.0)
    res = flda.gradual_self_train(t, X, truth[t < 36], sched)
    again = flda.replay(t, X, res.batches, sched)
    post = t >= 36
    np.testing.assert_array_equal(again[post], res.labels.labels[post])
    assert np.all(again[~post] == EXCLUDED)
