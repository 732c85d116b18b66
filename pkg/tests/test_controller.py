import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rollingq.controller import (BatchKeyStats, ControllerState, RollingQConfig, compute_alpha, compute_anchor,
                                 compute_batch_stats, compute_rotation, controller_step)
from rollingq.fusion import FusionParams, forward
from rollingq.linalg import ContractError, cosine_similarity, make_rng, unit


def key_with_cos(c):
    return [c, math.sqrt(1.0 - c * c)]


def trace_with_cosines(pairs):
    """Batched trace, query (1, 0), one token per modality with the given cosines."""
    p = FusionParams(np.eye(2), np.eye(2), np.eye(2), np.array([1.0, 0.0]))
    za = np.array([[key_with_cos(a)] for a, _ in pairs])
    zv = np.array([[key_with_cos(v)] for _, v in pairs])
    return forward(p, za, zv)


def stats(k_a, k_v, q):
    k_a, k_v, q = (np.asarray(x, dtype=float) for x in (k_a, k_v, q))
    ca, cv = cosine_similarity(k_a, q), cosine_similarity(k_v, q)
    return BatchKeyStats(k_a, k_v, q, ca, cv, ca - cv, 1)


def test_air_examples():
    assert compute_batch_stats(trace_with_cosines([(0.3, 0.3), (0.9, 0.9)])).air == pytest.approx(0.0, abs=1e-15)
    assert compute_batch_stats(trace_with_cosines([(1.0, -1.0)] * 3)).air == pytest.approx(2.0, abs=1e-15)
    assert compute_batch_stats(trace_with_cosines([(0.8, 0.2), (0.6, 0.4)])).air == pytest.approx(0.4, abs=1e-12)


def test_batch_stats_accepts_list_and_counts():
    tr = trace_with_cosines([(0.8, 0.2), (0.6, 0.4)])
    one = compute_batch_stats(tr)
    two = compute_batch_stats([tr, tr])
    assert two.size == 4 and one.size == 2
    assert two.air == pytest.approx(one.air, abs=1e-15)
    with pytest.raises(ContractError):
        compute_batch_stats([])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_air_bounded(d, batch, seed):
    rng = make_rng(seed)
    p = FusionParams(*(rng.standard_normal((d, d)) for _ in range(3)), rng.standard_normal(d))
    tr = forward(p, rng.standard_normal((batch, 3, d)), rng.standard_normal((batch, 2, d)))
    assert -2.0 <= compute_batch_stats(tr).air <= 2.0


def test_alpha_values():
    for rho in (0.1, 1.0, 7.5):
        assert compute_alpha(0.0, rho) == 0.5
    assert compute_alpha(1.0, 1.0) == pytest.approx(0.11920, abs=1e-5)
    assert compute_alpha(2.0, 1.0) == pytest.approx(0.01799, abs=1e-5)
    assert abs(compute_alpha(1.0, 1.0) - 0.5 * (1 + math.tanh(-1.0))) <= 1e-12
    with pytest.raises(ContractError):
        compute_alpha(0.3, 0.0)


@given(st.floats(-2, 2), st.floats(0.05, 10))
def test_alpha_antisymmetric(x, rho):
    assert abs(compute_alpha(-x, rho) - (1.0 - compute_alpha(x, rho))) <= 1e-12


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 10))
def test_alpha_decreasing(x, y, rho):
    if x < y:
        assert compute_alpha(x, rho) >= compute_alpha(y, rho)


def test_anchor_examples():
    s = stats([2.0, 0.0], [0.0, 5.0], [1.0, 1.0])
    assert np.allclose(compute_anchor(s, 0.5), [1.0, 1.0], atol=1e-15)
    s = stats([3.0, 4.0], [0.6, 0.8], [0.0, 2.0])
    for alpha in (0.0, 0.3, 1.0):
        assert np.allclose(compute_anchor(s, alpha), [1.2, 1.6], atol=1e-15)
    s = stats([1.0, 2.0, 2.0], [0.0, 0.0, 1.0], [4.0, 0.0, 0.0])
    assert np.allclose(compute_anchor(s, 1.0), unit([1.0, 2.0, 2.0]) * 4.0, atol=1e-15)


def test_anchor_degenerate():
    with pytest.raises(ContractError, match="mean query"):
        compute_anchor(BatchKeyStats(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.zeros(2), 0.0, 0.0, 0.0, 1), 0.5)
    with pytest.raises(ContractError, match="anchor"):
        compute_anchor(stats([1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.floats(-2, 2), st.integers(0, 2**32 - 1))
def test_anchor_leans_away_from_attended(d, air, seed):
    rng = make_rng(seed)
    s = stats(rng.standard_normal(d), rng.standard_normal(d), rng.standard_normal(d))
    alpha = compute_alpha(air, 1.0)
    anchor = compute_anchor(s, alpha)
    assert abs(np.linalg.norm(anchor) - np.linalg.norm(s.mean_query)) < 1e-12
    to_a = cosine_similarity(anchor, s.mean_key_a)
    to_v = cosine_similarity(anchor, s.mean_key_v)
    if air > 0:
        assert to_v >= to_a - 1e-12
    elif air < 0:
        assert to_a >= to_v - 1e-12


def test_rotation_examples():
    s = stats([1.0, 0.0], [0.0, 1.0], [3.0, 0.0])
    assert np.array_equal(compute_rotation(s, s.mean_query), np.eye(2))
    assert np.allclose(compute_rotation(s, [0.0, 3.0]), [[0, 1], [-1, 0]], atol=1e-15)
    rng = make_rng(16)
    s = stats(rng.standard_normal(16), rng.standard_normal(16), rng.standard_normal(16))
    anchor = compute_anchor(s, 0.3)
    assert np.max(np.abs(s.mean_query @ compute_rotation(s, anchor) - anchor)) < 1e-9


def _model_and_batch(seed, d=6):
    rng = make_rng(seed)
    p = FusionParams(*(rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3)), rng.standard_normal(d))
    za = rng.standard_normal((8, 3, d)) + 2.0 * rng.standard_normal(d)
    zv = rng.standard_normal((8, 3, d)) - 2.0 * rng.standard_normal(d)
    return p, za, zv


def test_controller_gates():
    p, za, zv = _model_and_batch(0)
    s = compute_batch_stats(forward(p, za, zv))
    state = ControllerState()
    r0 = p.rotation.copy()
    ev = controller_step(state, RollingQConfig(beta=abs(s.air) + 0.01), s, p, epoch=1)
    assert not ev.applied and ev.alpha is None
    assert np.array_equal(p.rotation, r0) and state.rotations_used == 0
    state = ControllerState(rotations_used=2)
    ev = controller_step(state, RollingQConfig(beta=0.01, max_rotations=2), s, p, epoch=2)
    assert not ev.applied and np.array_equal(p.rotation, r0) and state.rotations_used == 2
    assert state.air_history == [(2, s.air)]


def test_controller_rotates_query_onto_anchor():
    p, za, zv = _model_and_batch(1)
    before = p.copy()
    s = compute_batch_stats(forward(p, za, zv))
    assert abs(s.air) > 0.05
    state = ControllerState()
    ev = controller_step(state, RollingQConfig(beta=0.05), s, p, epoch=3)
    assert ev.applied and state.rotations_used == 1 and ev.alpha == compute_alpha(s.air, 1.0)
    anchor = compute_anchor(s, ev.alpha)
    after = forward(p, za, zv)
    mean_q = np.broadcast_to(after.query, (8, p.dim)).mean(axis=0)
    assert np.max(np.abs(mean_q - anchor)) < 1e-8
    for k in ("w_q", "w_k", "w_v", "z_cls"):
        assert np.array_equal(getattr(p, k), getattr(before, k))


def test_accumulated_rotation_stays_orthogonal():
    p, za, zv = _model_and_batch(2)
    state = ControllerState()
    cfg = RollingQConfig(beta=1e-9, max_rotations=50)
    rng = make_rng(5)
    for epoch in range(50):
        za = za + 0.3 * rng.standard_normal(za.shape)
        controller_step(state, cfg, compute_batch_stats(forward(p, za, zv)), p, epoch)
    r = p.rotation
    assert state.rotations_used == 50
    assert np.max(np.abs(r.T @ r - np.eye(p.dim))) < 1e-8
    assert abs(np.linalg.det(r) - 1.0) < 1e-8


def test_config_validation():
    with pytest.raises(ContractError):
        RollingQConfig(rho=0.0)
    with pytest.raises(ContractError):
        RollingQConfig(beta=0.0)
    with pytest.raises(ContractError):
        RollingQConfig(max_rotations=-1)
    with pytest.raises(ContractError):
        RollingQConfig(cadence="step")
