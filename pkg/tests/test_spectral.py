import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ybmodel import ModelParams, advance, advance_two, bounds
from ybmodel.spectral import (KinkWarning, find_period2_point, fresh_block_direct, h_derivative,
                              jacobian_T2, load_reference_point, newton_polish, spectrum)

REF_FIRST = 1.2326490487970465


@pytest.fixture(scope="module")
def polished(p_hat, params):
    return newton_polish(p_hat, params, tol=1e-12)


@pytest.fixture(scope="module")
def jac(polished, params):
    return jacobian_T2(polished.point, params)


def test_reference_point_asset():
    x = load_reference_point()
    assert x.shape == (201,)
    assert x[0] == REF_FIRST
    assert np.all(x > 0)


def test_reference_is_near_fixed(p_hat, params):
    r = advance_two(p_hat, params) - p_hat
    assert np.max(np.abs(r)) <= 1e-10


def test_find_from_reference_returns_immediately(p_hat, params):
    res = find_period2_point(p_hat, params, tol=1e-10)
    assert res.converged and res.iterations_used == 1
    assert res.sup_residual <= 1e-10


def test_find_from_constant_does_not_claim_fixed_point(params):
    res = find_period2_point(np.ones(201), params, tol=1e-12, max_iter=50)
    assert not res.converged
    assert np.all(np.isfinite(res.point))


def test_newton_polish_reference(polished):
    assert polished.converged
    assert polished.sup_residual <= 1e-12
    assert polished.iterations_used <= 5
    assert abs(polished.point[0] - REF_FIRST) < 1e-9


def test_newton_tol_zero_runs_max_iter(p_hat, params):
    res = newton_polish(p_hat, params, tol=0, max_iter=3)
    assert res.iterations_used == 3
    assert not res.converged


def test_newton_from_perturbed_guess(p_hat, params, polished):
    guess = p_hat.copy()
    guess[0] += 1e-6
    res = newton_polish(guess, params, tol=1e-12)
    assert res.converged
    assert np.max(np.abs(res.point - polished.point)) < 1e-10


def test_newton_far_guess_no_crash(params):
    res = newton_polish(np.full(201, 10.0), params, tol=1e-12, max_iter=20)
    assert np.all(np.isfinite(res.point))
    if res.converged:
        assert res.sup_residual <= 1e-12


def test_h_derivative(params):
    assert h_derivative(0.5, params) == 50
    assert h_derivative(2.0, params) == pytest.approx(50 * -7.25 * 2 ** -8.25, rel=1e-14)
    want = -mp.mpf(50) * mp.mpf("7.25") * mp.mpf(2) ** mp.mpf("-8.25")
    assert h_derivative(2.0, params) == pytest.approx(float(want), rel=1e-14)
    assert h_derivative(1.0, params) == 50
    assert h_derivative(np.nextafter(1.0, 2), params) == pytest.approx(-362.5, rel=1e-12)
    with pytest.raises(ValueError):
        h_derivative(0.0, params)


def test_schemes_agree(polished, params, jac):
    fd = jacobian_T2(polished.point, params, scheme="finite_difference")
    assert np.max(np.abs(fd - jac)) < 1e-4


def test_kink_warning(params):
    x = np.full(201, 2.0)
    x[3] = 1.0 + 1e-7
    with pytest.warns(KinkWarning):
        jacobian_T2(x, params, scheme="finite_difference")


def test_spectrum_at_period2_point(jac):
    rep = spectrum(jac)
    assert -3.5 <= rep.dominant <= -3.1
    assert rep.subdominant_modulus < 0.5
    assert np.sum(rep.all_moduli > 1) == 1


def test_jacobian_null_columns_are_closed_gate_coordinates(jac, params):
    # a coordinate sampled while reproduction is switched off never feeds a
    # later value; only the one copied through the shift survives
    gated = [k for k in range(params.dim - 1) if (k + 1) % 100 < 30]
    zero = np.nonzero(np.all(jac == 0, axis=0))[0]
    assert list(zero) == gated
    assert np.linalg.matrix_rank(jac) == params.dim - len(gated)


def test_spectrum_identity():
    rep = spectrum(np.eye(5))
    assert rep.dominant == pytest.approx(1.0)
    assert np.allclose(rep.all_moduli, 1.0)


def test_spectrum_rejects_non_square():
    with pytest.raises(ValueError):
        spectrum(np.ones((2, 3)))


def test_dominant_matches_dense_solve(jac):
    eig = np.linalg.eigvals(jac)
    top = eig[np.argmax(np.abs(eig))]
    assert abs(top.imag) < 1e-12
    assert spectrum(jac).dominant == pytest.approx(top.real, rel=1e-8)


def test_period_is_exactly_two(polished, params):
    assert np.max(np.abs(advance(polished.point, params) - polished.point)) > 0.1


def test_fresh_block_is_upper_triangular(p_hat, params):
    blk = fresh_block_direct(p_hat, params)
    assert blk.shape == (100, 100)
    assert np.all(np.tril(blk, -1) == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_check(seed):
    params = ModelParams()
    b = bounds(params)
    rng = np.random.default_rng(seed)
    x = rng.uniform(max(b.permanence_floor, 0.05), 5.0, params.dim)
    if np.any(np.abs(x - 1) < 1e-4):
        return
    v = rng.standard_normal(params.dim)
    h = 1e-6
    fd = (advance_two(x + h * v, params) - advance_two(x - h * v, params)) / (2 * h)
    an = jacobian_T2(x, params) @ v
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rel = np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300)
    assert rel < 1e-5
