import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refracted_levy.errors import DomainError
from refracted_levy.fluctuation import (
    ExitQuery,
    machinery,
    one_sided_down,
    one_sided_up,
    resolvent,
    resolvent_mass,
    ruin_probability,
    ruin_report,
    two_sided_down,
    two_sided_up,
)
from refracted_levy.levy_model import SmoothSaturating, StepProfile, ZERO_RATE, cl_a

SAT = SmoothSaturating(0.3, 1.0)
W_CLA_Q0 = lambda x: 2.0 - 4.0 / 3.0 * math.exp(-x / 3.0)


def test_query_validation():
    with pytest.raises(DomainError):
        ExitQuery(1.0, 2.0, 3.0)
    with pytest.raises(DomainError):
        ExitQuery(4.0, 0.0, 3.0)
    with pytest.raises(DomainError):
        ExitQuery(1.0, q=-0.1)


def test_brownian_two_sided_closed_form(bma):
    m = machinery(bma, ZERO_RATE, 0.0)
    got = two_sided_up(ExitQuery(1.0, 0.0, 2.0), m)
    assert got == pytest.approx((1 - math.exp(-2)) / (1 - math.exp(-4)), abs=1e-9)


def test_start_at_upper_barrier(cla, two_step):
    m = machinery(cla, two_step, 0.25)
    q = ExitQuery(3.0, 0.0, 3.0, 0.25)
    assert two_sided_up(q, m) == 1.0
    assert two_sided_down(q, m) == 0.0
    assert one_sided_up(q, m) == 1.0


@pytest.mark.parametrize("profile", [StepProfile((1.0, 2.0), (0.1, 0.2)), SAT])
def test_complementary_at_zero_discount(cla, profile):
    m = machinery(cla, profile, 0.0, 0.0, 2.0**-8, 4.0)
    for x in np.linspace(0.0, 3.0, 13):
        q = ExitQuery(float(x), 0.0, 3.0, 0.0)
        assert two_sided_up(q, m) + two_sided_down(q, m) == pytest.approx(1.0, abs=1e-12)


def test_two_sided_values(cla, two_step):
    m0 = machinery(cla, two_step, 0.0)
    q0 = ExitQuery(1.5, 0.0, 3.0, 0.0)
    assert two_sided_up(q0, m0) == pytest.approx(0.7443615, abs=1e-6)
    m = machinery(cla, two_step, 0.25)
    q = ExitQuery(1.5, 0.0, 3.0, 0.25)
    assert two_sided_up(q, m) == pytest.approx(0.4862669, abs=1e-6)
    assert two_sided_down(q, m) == pytest.approx(0.2021369, abs=1e-6)


def test_one_sided_down_zero_rate_at_origin(cla):
    # Z(0) - (q / Phi(q)) W(0) = 1 - 0.75 * 2/3
    m = machinery(cla, ZERO_RATE, 0.25)
    assert one_sided_down(ExitQuery(0.0, 0.0, None, 0.25), m) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("profile", [StepProfile((1.0, 2.0), (0.1, 0.2)), SAT])
def test_one_sided_down_decays(cla, profile):
    m = machinery(cla, profile, 0.25, 0.0, 2.0**-8, 12.0)
    vals = [one_sided_down(ExitQuery(float(x), 0.0, None, 0.25), m) for x in np.linspace(0.0, 10.0, 21)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.05 * vals[0]


def test_one_sided_down_continuous_at_barrier(cla, one_step):
    m = machinery(cla, one_step, 0.25, 0.0, 2.0**-10, 4.0)
    eps = 1e-6
    lo = one_sided_down(ExitQuery(1.0 - eps, 0.0, None, 0.25), m)
    hi = one_sided_down(ExitQuery(1.0 + eps, 0.0, None, 0.25), m)
    assert abs(hi - lo) < 1e-5


def test_one_sided_up_certain_without_discount(cla):
    m = machinery(cla, ZERO_RATE, 0.0)
    for x in (0.0, 1.0, 2.5):
        assert one_sided_up(ExitQuery(x, None, 3.0, 0.0), m) == pytest.approx(1.0, abs=1e-12)


def test_two_sided_down_approaches_one_sided(cla, two_step):
    target = one_sided_down(ExitQuery(1.5, 0.0, None, 0.25), machinery(cla, two_step, 0.25))
    gaps = []
    for a in (10.0, 20.0, 40.0):
        m = machinery(cla, two_step, 0.25, 0.0, 2.0**-8, a + 1.0)
        gaps.append(target - two_sided_down(ExitQuery(1.5, 0.0, a, 0.25), m))
    # the gap shrinks until it reaches the grid error
    assert gaps[0] > gaps[1] > 0.0
    assert abs(gaps[2]) < 1e-7


def test_resolvent_support(cla, two_step):
    m = machinery(cla, two_step, 0.25)
    y = np.array([-1.0, 0.0, 0.5, 2.5, 3.0, 4.0])
    dens = resolvent(ExitQuery(1.5, 0.0, 3.0, 0.25), "two_barrier", m, y).density
    assert dens[0] == dens[1] == dens[4] == dens[5] == 0.0
    assert np.all(dens[2:4] > 0.0)
    with pytest.raises(DomainError):
        resolvent(ExitQuery(1.5, 0.0, None, 0.0), "lower_only", m, y)


@pytest.mark.parametrize("profile", [ZERO_RATE, StepProfile((1.0, 2.0), (0.1, 0.2))])
def test_free_resolvent_total_mass(cla, profile):
    m = machinery(cla, profile, 0.25)
    mass, _ = resolvent_mass(ExitQuery(1.5, None, None, 0.25), "free", m)
    assert 0.25 * mass == pytest.approx(1.0, abs=1e-4)


def test_resolvent_limits_reproduce_one_barrier_variants(cla, two_step):
    y = np.array([0.5, 1.2, 2.5])
    lower = resolvent(ExitQuery(1.5, 0.0, None, 0.25), "lower_only", machinery(cla, two_step, 0.25), y)
    wide = machinery(cla, two_step, 0.25, 0.0, 2.0**-8, 42.0)
    two = resolvent(ExitQuery(1.5, 0.0, 40.0, 0.25), "two_barrier", wide, y)
    np.testing.assert_allclose(two.density, lower.density, atol=1e-4)
    upper = resolvent(ExitQuery(1.5, None, 3.0, 0.25), "upper_only", machinery(cla, two_step, 0.25), y)
    deep = machinery(cla, two_step, 0.25, -30.0, 2.0**-8, 10.0)
    two = resolvent(ExitQuery(1.5, -30.0, 3.0, 0.25), "two_barrier", deep, y)
    np.testing.assert_allclose(two.density, upper.density, atol=1e-4)


def test_resolvent_to_exit_identity_step(cla, two_step):
    m = machinery(cla, two_step, 0.25)
    q = ExitQuery(1.5, 0.0, None, 0.25)
    mass, _ = resolvent_mass(q, "lower_only", m)
    assert one_sided_down(q, m) == pytest.approx(1.0 - 0.25 * mass, abs=1e-4)


@pytest.mark.slow
def test_resolvent_to_exit_identity_smooth(cla):
    m = machinery(cla, SAT, 0.25, 0.0, 2.0**-8, 60.0)
    q = ExitQuery(1.5, 0.0, None, 0.25)
    mass, _ = resolvent_mass(q, "lower_only", m, tol=1e-6)
    assert one_sided_down(q, m) == pytest.approx(1.0 - 0.25 * mass, abs=1e-4)


def test_classical_ruin(cla):
    assert ruin_probability(0.0, cla, ZERO_RATE) == pytest.approx(2.0 / 3.0, abs=1e-10)
    for x in (0.5, 2.0, 7.0):
        assert ruin_probability(x, cla, ZERO_RATE) == pytest.approx(2.0 / 3.0 * math.exp(-x / 3.0), abs=1e-9)


def test_one_step_ruin_closed_form(cla, one_step):
    # w_1(2) from adaptive quadrature, W(1) in closed form
    expected = 1.0 - (0.5 - 0.1) / (1.0 - 0.1 * W_CLA_Q0(1.0)) * 1.3414154207351328
    assert ruin_probability(2.0, cla, one_step) == pytest.approx(expected, abs=1e-8)


def test_ruin_is_certain_when_drain_beats_drift(cla):
    heavy = StepProfile((1.0,), (0.5,))
    rep = ruin_report(3.0, cla, heavy)
    assert rep.value == 1.0 and rep.divergent_a
    assert ruin_probability(3.0, cla, SmoothSaturating(0.6, 1.0)) == 1.0


def test_general_ruin_matches_step(cla, two_step):
    from refracted_levy.fluctuation import _general_ruin

    rep = _general_ruin(2.0, cla, two_step, 2.0**-9, 0.5)
    assert rep.value == pytest.approx(ruin_probability(2.0, cla, two_step), abs=1e-4)


@settings(max_examples=15)
@given(x=st.floats(0.0, 6.0), dx=st.floats(0.05, 2.0))
def test_ruin_non_increasing_in_start(x, dx):
    m = cl_a()
    for profile in (StepProfile((1.0, 2.0), (0.1, 0.2)), SAT):
        assert ruin_probability(x + dx, m, profile) <= ruin_probability(x, m, profile) + 1e-9


@settings(max_examples=15)
@given(x=st.floats(0.0, 6.0), extra=st.floats(0.01, 0.15))
def test_ruin_non_decreasing_in_drain(x, extra):
    m = cl_a()
    small = StepProfile((1.0, 2.0), (0.1, 0.2))
    large = StepProfile((1.0, 2.0), (0.1 + extra, 0.2))
    assert ruin_probability(x, m, large) >= ruin_probability(x, m, small) - 1e-9
