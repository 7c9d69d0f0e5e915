import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from fltrust import aggregation, attacks, data
from fltrust.data import TriggerSpec
from fltrust.errors import ConfigError
from fltrust.model import LOGISTIC, ModelSpec, model_update


def test_label_flip_poison():
    ds = data.generate_synthetic(num_classes=10, input_dim=4, per_class=3, seed=0)
    ds.y[:5] = 0  # unbalance it so the histogram reversal is visible
    flipped = attacks.label_flip_poison(ds)
    assert np.array_equal(flipped.X, ds.X)
    assert np.array_equal(flipped.label_counts(), ds.label_counts()[::-1])
    again = attacks.label_flip_poison(flipped)
    assert np.array_equal(again.y, ds.y)


def test_label_flip_keeps_balance():
    ds = data.generate_synthetic(num_classes=6, input_dim=4, per_class=4, seed=0)
    assert np.all(attacks.label_flip_poison(ds).label_counts() == 4)


# -- Krum attack ------------------------------------------------------------------------

def test_krum_attack_empty():
    assert attacks.krum_attack(np.ones((5, 2)), 0, 1) == []


def test_krum_attack_direction_opposes_mean_sign():
    rng = np.random.default_rng(5)
    U = rng.normal(0.2, 1.0, (7, 6))
    U[:, 2] = 0.0  # s = 0 on this coordinate
    s = attacks.mean_sign(U)
    for g in attacks.krum_attack(U, 2, 2):
        assert np.array_equal(np.sign(g)[s != 0], -s[s != 0])
        assert np.all(g[s == 0] == 0)


def test_krum_attack_captures_krum_on_clustered_instance():
    rng = np.random.default_rng(0)
    U = 0.5 + rng.normal(size=(6, 4))
    crafted = attacks.krum_attack(U, 2, 2)
    assert len(crafted) == 2
    assert not np.array_equal(crafted[0], crafted[1])
    poisoned = np.vstack(crafted + [U[2:]])
    assert oracles.krum_index(poisoned.tolist(), 2) < 2


def test_krum_attack_precondition():
    with pytest.raises(ConfigError):
        attacks.krum_attack(np.ones((4, 2)), 1, 2)


# -- Trim attack -------------------------------------------------------------------------

def test_trim_attack_empty():
    assert attacks.trim_attack(np.ones((5, 2)), 0, np.random.default_rng(0)) == []


@given(st.integers(0, 10_000), st.integers(1, 5))
@settings(max_examples=100, deadline=None)
def test_trim_attack_lands_outside_benign_range(seed, m):
    rng = np.random.default_rng(seed)
    U = rng.normal(rng.normal(size=5), 1.0, (6, 5))
    s = attacks.mean_sign(U)
    lo, hi = U.min(axis=0), U.max(axis=0)
    width = np.maximum(np.maximum(np.abs(lo), np.abs(hi)), 1e-3)
    for v in attacks.trim_attack(U, m, rng):
        assert np.all(np.isfinite(v))
        pos, neg = s > 0, s < 0
        assert np.all(v[pos] <= lo[pos]) and np.all(v[pos] >= lo[pos] - width[pos])
        assert np.all(v[neg] >= hi[neg]) and np.all(v[neg] <= hi[neg] + width[neg])


def test_trim_attack_drags_trimmed_mean_down():
    benign = np.array([[1.0], [2.0], [3.0]])
    assert aggregation.trimmed_mean(benign, 1)[0] == 2.0
    crafted = attacks.trim_attack(benign, 2, np.random.default_rng(0))
    assert all(v[0] < 1.0 for v in crafted)
    attacked = np.vstack(crafted + [benign])
    assert oracles.trimmed_mean(attacked.tolist(), 2)[0] < 2.0


# -- Scaling attack -----------------------------------------------------------------------

def _client(seed=0):
    return data.generate_synthetic(num_classes=3, input_dim=5, per_class=8, seed=seed)


def test_scaling_attack_noop_matches_benign_update():
    spec = ModelSpec(LOGISTIC, 5, 3)
    D = _client()
    w = np.random.default_rng(1).normal(0, 0.1, spec.num_params)
    trig = TriggerSpec((4,), (3.0,), 0)
    attacked = attacks.scaling_attack(D, trig, 0.0, 1.0, spec, w, 8, 0.1, 3, np.random.default_rng(7))
    benign = model_update(spec, w, D, 8, 0.1, 3, np.random.default_rng(7))
    assert np.array_equal(attacked, benign)


def test_scaling_attack_scales_the_poisoned_update():
    spec = ModelSpec(LOGISTIC, 5, 3)
    D = _client()
    w = np.zeros(spec.num_params)
    trig = TriggerSpec((4,), (3.0,), 0)
    augmented = attacks.augment_with_trigger(D, trig, 0.5, np.random.default_rng(3))
    assert len(augmented) == len(D) + 12
    assert np.all(augmented.y[len(D):] == 0) and np.all(augmented.X[len(D):, 4] == 3.0)
    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
    out = attacks.scaling_attack(D, trig, 0.5, 20.0, spec, w, len(augmented), 0.1, 1, rng_a)
    attacks.augment_with_trigger(D, trig, 0.5, rng_b)
    plain = model_update(spec, w, augmented, len(augmented), 0.1, 1, rng_b)
    assert np.array_equal(out, 20.0 * plain)
    assert np.linalg.norm(out) == pytest.approx(20.0 * np.linalg.norm(plain), rel=1e-15)


def test_default_scaling_factor_is_client_count():
    from fltrust.config import ExperimentConfig

    assert ExperimentConfig(n=30).resolved()["scaling_lambda"] == 30.0


# -- adaptive attack ------------------------------------------------------------------------

def _instance(seed, n=6, d=8):
    rng = np.random.default_rng(seed)
    return rng.normal(0.3, 1.0, d), rng.normal(0.3, 1.0, (n, d))


def test_objective_is_zero_for_the_true_directions():
    g0, U = _instance(0)
    ctx = attacks.AdaptiveContext.from_updates(g0, U, 2)
    E = U[:2] / np.linalg.norm(U[:2], axis=1, keepdims=True)
    assert abs(attacks.adaptive_objective(E, ctx)) < 1e-12


def test_objective_with_clipped_directions_uses_benign_terms_only():
    g0, U = _instance(1)
    ctx = attacks.AdaptiveContext.from_updates(g0, U, 2)
    e0 = g0 / np.linalg.norm(g0)
    crafted = np.vstack([-e0, -e0])
    tail = np.maximum(ctx.cosines[2:], 0)
    benign = tail @ ctx.directions[2:] / tail.sum()
    expected = np.linalg.norm(g0) * ctx.s @ (ctx.clean - benign)
    assert attacks.adaptive_objective(crafted, ctx) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_objective_matches_direct_formula(seed):
    rng = np.random.default_rng(seed)
    g0, U = rng.normal(0.2, 1, 3), rng.normal(0.2, 1, (4, 3))
    crafted = rng.normal(size=(2, 3))
    crafted /= np.linalg.norm(crafted, axis=1, keepdims=True)
    ctx = attacks.AdaptiveContext.from_updates(g0, U, 2)
    expected = oracles.adaptive_objective(crafted.tolist(), g0.tolist(), U.tolist(), 2)
    assert abs(attacks.adaptive_objective(crafted, ctx) - expected) < 1e-10


def test_zeroth_order_on_linear_and_constant_objectives():
    a = np.array([1.0, -2.0, 0.5, 3.0])
    e = np.array([0.5, 0.5, 0.5, 0.5])
    for gamma in (1e-3, 0.005, 0.7):
        est = attacks.zeroth_order_grad(lambda v: float(a @ v), e, gamma, np.random.default_rng(4))
        u = np.sqrt(0.5) * np.random.default_rng(4).standard_normal(4)
        assert np.allclose(est, (a @ u) * u, rtol=1e-9, atol=1e-12)
    assert np.all(attacks.zeroth_order_grad(lambda v: 3.0, e, 0.01, np.random.default_rng(0)) == 0)


def test_zeroth_order_is_deterministic():
    h = lambda v: float(np.sum(np.sin(v)))
    e = np.linspace(0, 1, 5)
    a = attacks.zeroth_order_grad(h, e, 0.005, np.random.default_rng(42))
    b = attacks.zeroth_order_grad(h, e, 0.005, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_adaptive_attack_outputs_have_server_norm():
    g0, U = _instance(2)
    dirs, _, _ = attacks.adaptive_directions(g0, U, 2, np.random.default_rng(0))
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-9)
    crafted = attacks.adaptive_attack(g0, U, 2, np.random.default_rng(0))
    assert np.allclose([np.linalg.norm(g) for g in crafted], np.linalg.norm(g0), rtol=1e-9)
    again = attacks.adaptive_attack(g0, U, 2, np.random.default_rng(0))
    assert all(np.array_equal(a, b) for a, b in zip(crafted, again))
    assert attacks.adaptive_attack(g0, U, 0, np.random.default_rng(0)) == []


def test_adaptive_attack_usually_improves_on_trim_start():
    improved = 0
    for s in range(50):
        g0, U = _instance(1000 + s)
        _, h_start, h_end = attacks.adaptive_directions(g0, U, 2, np.random.default_rng(s))
        improved += h_end >= h_start
    assert improved >= 40


def test_fltrust_norm_bound_survives_adaptive_attack():
    for s in range(20):
        g0, U = _instance(s)
        V = U.copy()
        V[:2] = np.vstack(attacks.adaptive_attack(g0, U, 2, np.random.default_rng(s), Q=3, V=3))
        assert np.linalg.norm(aggregation.fltrust_aggregate(V, g0)) <= np.linalg.norm(g0) * (1 + 1e-9)


def test_attack_config_validation():
    with pytest.raises(ConfigError):
        attacks.AttackConfig(kind="gaussian")
    with pytest.raises(ConfigError):
        attacks.AttackConfig(kind=attacks.SCALING, scaling_p=1.5)
    with pytest.raises(ConfigError):
        attacks.AttackConfig(kind=attacks.ADAPTIVE, gamma=0.0)
    with pytest.raises(ConfigError):
        attacks.AttackConfig(m=5).validate(4)
