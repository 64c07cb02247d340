import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from ybmodel import (DomainError, ModelParams, advance, advance_two, bounds, fecundity,
                     next_component, season_gate, survival)
from ybmodel.model import close_window, iterate, iterate_extended, trajectory


def test_survival_values(params):
    assert survival(0, params) == 1.0
    assert survival(200, params) == pytest.approx(1 / 201, rel=1e-15)
    assert survival(201, params) == 0.0
    assert survival(-1, params) == 0.0


def test_survival_other_denominator():
    p = ModelParams(survival_denominator_mode="2p")
    assert survival(200, p) == 0.0
    assert survival(100, p) == 0.5


def test_season_gate(params):
    assert season_gate(0, params) == 0
    assert season_gate(30, params) == 1
    assert season_gate(129, params) == 0
    assert season_gate(99, params) == 1


def test_fecundity_branches(params):
    assert fecundity(1.0, params) == 50
    assert fecundity(0.5, params) == 50
    want = float(mp.mpf(50) * mp.mpf(2) ** mp.mpf("-8.25"))
    assert fecundity(2.0, params) == pytest.approx(want, rel=1e-14)
    assert want == pytest.approx(0.164238, abs=1e-6)


def test_bounds_defaults(params):
    b = bounds(params)
    assert b.n_max == pytest.approx(50 * 1.82 ** 2 / 4, rel=1e-15)
    assert round(b.n_max, 1) == 41.4
    assert b.c0 == pytest.approx(0.4095, abs=1e-15)
    assert b.c0 * params.fecundity_cap == pytest.approx(20.475, abs=1e-9)
    assert b.lipschitz_bound == pytest.approx(659.75, abs=1e-9)


def test_invalid_params():
    with pytest.raises(ValueError):
        ModelParams(steps_per_year=0)
    with pytest.raises(ValueError):
        ModelParams(decay_exponent=1.0)
    with pytest.raises(ValueError):
        ModelParams(winter_fraction=1.0)
    with pytest.raises(ValueError):
        ModelParams(fecundity_cap=1.0)


def test_next_component_zero_window(params):
    assert next_component(200, np.zeros(200), params) == 0.0


def test_next_component_unit_window(params):
    # all ones, t = 2p: brute-force sum with the gate at the source index
    got = next_component(200, np.ones(200), params)
    want = sum(50 * oracles.gate_at_index(200 - h) * oracles.surv(h) for h in range(18, 200)) / 100
    assert got == pytest.approx(float(want), rel=1e-14)


def test_next_component_short_series(params):
    with pytest.raises(ValueError):
        next_component(200, np.ones(150), params)


def test_advance_two_matches_oracle(params, p_hat):
    want = np.array([float(v) for v in oracles.advance_two(p_hat)])
    got = advance_two(p_hat, params)
    assert np.max(np.abs(got - want)) < 1e-12


def test_trajectory_matches_oracle(params, rng):
    x = close_window(rng.uniform(0.5, 5, 200), params)
    want = np.array([float(v) for v in oracles.extend(x, 3)])
    got = trajectory(x, params, 3)
    assert len(got) == 201 + 300
    assert np.max(np.abs(got - want) / np.maximum(1, np.abs(want))) < 1e-12


def test_trajectory_two_years(params, p_hat):
    assert len(trajectory(p_hat, params, 2)) - params.dim == 200


def test_advance_twice_is_advance_two(params, p_hat):
    assert np.array_equal(advance(advance(p_hat, params), params), advance_two(p_hat, params))


def test_shift_exactness(params, rng):
    x = close_window(rng.uniform(0.1, 10, 200), params)
    y = advance(x, params)
    assert np.array_equal(y[:101], x[100:])


def test_domain_errors(params):
    with pytest.raises(DomainError):
        advance(np.ones(200), params)
    x = np.ones(201)
    x[5] = 0
    with pytest.raises(DomainError):
        advance(x, params)
    x[5] = np.nan
    with pytest.raises(DomainError):
        advance(x, params)


def test_non_injectivity_witness(params):
    nmax = bounds(params).n_max
    x = close_window(np.full(200, nmax), params)
    y = close_window(np.full(200, nmax ** (1 - params.decay_exponent)), params)
    assert not np.allclose(x, y)
    assert np.max(np.abs(advance_two(x, params) - advance_two(y, params))) < 1e-12


def test_extended_iteration_close_to_binary64(params, p_hat):
    ext = iterate_extended(p_hat, params)
    assert ext.dtype == np.longdouble
    assert np.max(np.abs(ext.astype(float) - advance_two(p_hat, params))) < 1e-13


@pytest.mark.skipif(np.finfo(np.longdouble).eps > 1e-18,
                    reason="needs 80-bit extended precision")
def test_extended_residual_of_reference_point(params, p_hat):
    from ybmodel.model import close_window_extended
    from ybmodel.spectral import load_reference_point

    x = load_reference_point().astype(np.longdouble)
    res = float(np.max(np.abs(iterate_extended(x, params) - x)))
    assert res == pytest.approx(8.0148e-14, rel=0.01)
    assert close_window_extended(x[:200], params).dtype == np.longdouble


positive_heads = arrays(np.float64, 200, elements=st.floats(1e-3, 60.0))


@settings(max_examples=40, deadline=None)
@given(positive_heads)
def test_boundedness_after_maturation(head):
    params = ModelParams()
    x = close_window(head, params)
    fresh = trajectory(x, params, 4)[params.dim + 18:]
    assert np.all(fresh <= bounds(params).n_max + 1e-12)
    assert np.all(fresh > 0)


@settings(max_examples=40, deadline=None)
@given(positive_heads, st.integers(0, 2**32 - 1))
def test_lipschitz_property(head, seed):
    params = ModelParams()
    rng = np.random.default_rng(seed)
    x = close_window(head, params)
    y = x * np.exp(rng.uniform(-1e-3, 1e-3, x.shape))
    lhs = np.max(np.abs(advance(x, params) - advance(y, params)))
    assert lhs <= bounds(params).lipschitz_bound * np.max(np.abs(x - y)) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trapping_box(seed):
    params = ModelParams()
    b = bounds(params)
    rng = np.random.default_rng(seed)
    x = rng.uniform(b.permanence_floor, b.n_max, params.dim)
    y = advance(x, params)
    assert np.all(y >= b.permanence_floor) and np.all(y <= b.n_max + 1e-12)


@settings(max_examples=25, deadline=None)
@given(positive_heads, st.integers(1, 5))
def test_iterate_composes(head, n):
    params = ModelParams()
    x = close_window(head, params)
    step = x
    for _ in range(n):
        step = advance_two(step, params)
    assert np.array_equal(iterate(x, params, n), step)


def test_permanence_floor_reached(params, rng):
    b = bounds(params)
    x = close_window(rng.uniform(0.01, 0.02, 200), params)
    fresh = trajectory(x, params, 200)[params.dim:]
    low = np.nonzero(fresh < b.permanence_floor)[0]
    t0 = 0 if len(low) == 0 else low[-1] + 1
    assert t0 < len(fresh) // 2
    assert math.isfinite(b.permanence_floor) and b.permanence_floor > 0
