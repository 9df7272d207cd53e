import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from refracted_levy.errors import BreakpointMisaligned, DomainError
from refracted_levy.levy_model import DriftShift, shipped_models
from refracted_levy.scale_base import (
    convolve_exact,
    initial_value,
    sample_to_grid,
    scale_function,
    verify_laplace,
    z_function,
)

NO_SHIFT = DriftShift(0.0)


def _sorted_terms(s):
    order = np.argsort(-s.exponents.real)
    return s.coefficients[order].real, s.exponents[order].real


def test_cla_discounted_terms(cla):
    c, e = _sorted_terms(scale_function(cla, NO_SHIFT, 0.25))
    np.testing.assert_allclose(e, [1 / 3, -1 / 2], atol=1e-10)
    np.testing.assert_allclose(c, [16 / 15, -2 / 5], atol=1e-9)


def test_cla_undiscounted_terms(cla):
    c, e = _sorted_terms(scale_function(cla, NO_SHIFT, 0.0))
    np.testing.assert_allclose(e, [0.0, -1 / 3], atol=1e-12)
    np.testing.assert_allclose(c, [2.0, -4 / 3], atol=1e-12)


def test_bma_terms(bma):
    c, e = _sorted_terms(scale_function(bma, NO_SHIFT, 0.0))
    np.testing.assert_allclose(e, [0.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(c, [1.0, -1.0], atol=1e-12)


def test_z_values(cla):
    s = scale_function(cla, NO_SHIFT, 0.25)
    assert z_function(s, 0.0) == 1.0
    assert z_function(s, -2.0) == 1.0
    assert z_function(s, 1.0) == pytest.approx(1.2377960720113983, abs=1e-13)
    s0 = scale_function(cla, NO_SHIFT, 0.0)
    assert np.all(np.asarray(z_function(s0, np.linspace(0, 10, 11))) == 1.0)


def test_initial_values(cla, bma):
    assert initial_value(cla, NO_SHIFT) == pytest.approx(2 / 3, abs=1e-15)
    assert initial_value(cla, DriftShift(0.3)) == pytest.approx(1 / 1.2, abs=1e-15)
    assert initial_value(bma, DriftShift(0.3)) == 0.0
    for m in shipped_models():
        for shift in (0.0, 0.3):
            s = scale_function(m, DriftShift(shift), 0.25)
            assert s.value(0.0) == pytest.approx(initial_value(m, DriftShift(shift)), abs=1e-10)


def test_laplace_examples(cla, bma):
    assert verify_laplace(scale_function(cla, NO_SHIFT, 0.25), cla, NO_SHIFT, 0.25, 1.0) <= 1e-10
    assert verify_laplace(scale_function(bma, NO_SHIFT, 0.0), bma, NO_SHIFT, 0.0, 1.0) <= 1e-10
    for m in shipped_models():
        s = scale_function(m, NO_SHIFT, 1.0)
        assert verify_laplace(s, m, NO_SHIFT, 1.0, s.largest + 10.0) <= 1e-10


def test_laplace_rejects_small_argument(cla):
    s = scale_function(cla, NO_SHIFT, 0.25)
    with pytest.raises(DomainError):
        verify_laplace(s, cla, NO_SHIFT, 0.25, 0.2)


def test_value_zero_below_origin(cla):
    s = scale_function(cla, NO_SHIFT, 0.25)
    assert np.all(np.asarray(s.value(np.array([-5.0, -1e-9]))) == 0.0)


def test_sample_to_grid_closed_form(bma):
    g = sample_to_grid(scale_function(bma, NO_SHIFT, 0.0), 0.0, 0.5, 4)
    np.testing.assert_allclose(g.values, [1 - math.exp(-k) for k in range(5)], atol=1e-15)


def test_sample_to_grid_misaligned(bma):
    with pytest.raises(BreakpointMisaligned):
        sample_to_grid(scale_function(bma, NO_SHIFT, 0.0), 0.0, 0.25, 8, breakpoints=(0.3,))


def test_bv_right_derivative_at_zero(cla):
    # W'(0+) = (intensity + q) / c^2
    for q in (0.0, 0.25):
        s = scale_function(cla, NO_SHIFT, q)
        assert s.derivative(0.0) == pytest.approx((1.0 + q) / 1.5**2, abs=1e-12)


def test_grid_self_consistency(cla):
    s = scale_function(cla, NO_SHIFT, 0.25)
    for h in (2.0**-6, 2.0**-7):
        gap, C = sample_to_grid(s, 0.0, h, int(8 / h)).self_consistency()
        assert gap <= C * h**2 + 1e-15 and C < 1.0


@pytest.mark.parametrize("idx", range(4))
@pytest.mark.parametrize("q", [0.0, 0.25, 1.0])
def test_monotone_positive(idx, q):
    m = shipped_models()[idx]
    s = scale_function(m, NO_SHIFT, q)
    x = np.linspace(0.0, 30.0, 3001)
    v = np.asarray(s.value(x))
    # strict growth shows in the derivative; values saturate in floating point
    assert np.all(np.diff(v) >= 0.0)
    assert np.all(np.asarray(s.derivative(x)) > 0.0)
    assert np.all(v[1:] > 0.0)


@given(idx=st.integers(0, 3), q=st.sampled_from([0.0, 0.25, 1.0]), off=st.floats(0.1, 20.0))
def test_laplace_identity_random(idx, q, off):
    m = shipped_models()[idx]
    s = scale_function(m, NO_SHIFT, q)
    assert verify_laplace(s, m, NO_SHIFT, q, s.largest + off) <= 1e-10


@pytest.mark.parametrize("z", [0.5, 1.0, 5.0])
@pytest.mark.parametrize("q", [0.0, 0.25])
def test_drift_shift_convolution_identity(z, q):
    # delta (W_k * W_{k-1})(z) = int_0^z W_k - int_0^z W_{k-1}
    for m in shipped_models():
        lower = scale_function(m, DriftShift(0.1), q)
        upper = scale_function(m, DriftShift(0.3), q)
        lhs = 0.2 * convolve_exact(upper, lower, z)
        rhs = float(upper.integral(z) - lower.integral(z))
        assert lhs == pytest.approx(rhs, abs=1e-8)


@pytest.mark.parametrize("q", [0.0, 0.25, 1.0])
def test_growth_bounded_by_right_inverse(q):
    for m in shipped_models():
        s = scale_function(m, NO_SHIFT, q)
        x = np.linspace(0.0, 50.0, 201)
        scaled = np.exp(-s.largest * x) * np.asarray(s.value(x))
        # exp(-phi x) W(x) settles to a finite limit, so an extra exp(-0.1 x) kills it
        assert abs(scaled[-1] - scaled[-41]) <= 1e-5 * scaled[-1]
        damped = np.exp(-0.1 * x) * scaled
        assert damped[-1] <= math.exp(-5.0) * scaled.max() * (1 + 1e-12)
