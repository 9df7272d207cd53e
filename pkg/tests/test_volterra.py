import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from refracted_levy.errors import DomainError, MajorantDiverged
from refracted_levy.levy_model import SmoothLinearClamp, SmoothSaturating, StepProfile, ZERO_RATE, bm_a, cl_a
from refracted_levy.refracted import build_scale_set, build_u, build_w, build_z, level_scale, resolvent_normalizer, v_k
from refracted_levy.volterra import (
    ForcingTerm,
    VolterraKernel,
    a_of_q,
    approximate_profile,
    convergence_report,
    kernel_iterate_check,
    majorant,
    neumann_apply,
    richardson_error,
    solve,
    solve_w_prime,
    solve_z_prime,
    u_general,
    u_probe,
    v_general,
)

SAT = SmoothSaturating(0.3, 1.0)
H = 2.0**-9


def test_kernel_support_and_bound(cla):
    k = VolterraKernel.build(cla, SAT, 0.25)
    x = np.linspace(-1.0, 5.0, 61)
    X, Y = np.meshgrid(x, x, indexing="ij")
    K = k(X, Y)
    assert np.all(K[:, x <= 0.0] == 0.0)
    assert np.all(K >= 0.0)
    a = k.a_T(5.0)
    assert np.all(K <= a * k.base.derivative(np.maximum(X - Y, 0.0)) * (X >= Y) + 1e-15)


def test_majorant_probe_contracts(cla):
    k = VolterraKernel.build(cla, SAT, 0.25)
    s = k.majorant_probe(5.0)
    assert k.a_T(5.0) * k.base.derivative_laplace(s) < 1.0


def test_majorant_probe_budget_exhausted(cla):
    k = VolterraKernel.build(cla, SmoothSaturating(1.4, 5.0), 1.0)
    with pytest.raises(MajorantDiverged):
        k.majorant_probe(5.0, s_max=1e-3)


@pytest.mark.parametrize("q", [0.0, 0.25])
def test_zero_rate_is_base_derivative(cla, q):
    g = solve_w_prime(cla, ZERO_RATE, q, 0.0, H, 5.0)
    np.testing.assert_allclose(g.derivatives, level_scale(cla, 0.0, q).derivative(g.x), atol=1e-14)


def test_z_undiscounted_is_one(cla):
    g = solve_z_prime(cla, SAT, 0.0, H, 5.0)
    assert np.all(g.values == 1.0) and np.all(g.derivatives == 0.0)


def test_step_rate_matches_recursion(cla, two_step):
    a = solve_w_prime(cla, two_step, 0.25, 0.0, H, 6.0)
    b = build_w(cla, two_step, 0.25, 0.0, H, 6.0)
    assert np.abs(a.values - b.values).max() <= max(1e-6, 5 * H**2 * b.values.max())
    za = solve_z_prime(cla, two_step, 0.25, H, 6.0)
    zb = build_z(cla, two_step, 0.25, H, 6.0)
    assert np.abs(za.values - zb.values).max() <= max(1e-6, 5 * H**2 * zb.values.max())


@pytest.mark.parametrize(
    "x, w, z",
    [(1.0, 1.0812289425147872, 1.2652746688737253), (2.0, 1.437486331865676, 1.790437625493588),
     (5.0, 2.2162624267921127, 6.770121115929087)],
)
def test_smooth_rate_refinement_fixture(cla, x, w, z):
    # extrapolated from h = 2^-10 and 2^-11
    h = 2.0**-10
    assert solve_w_prime(cla, SAT, 0.0, 0.0, h, 6.0).hermite(x) == pytest.approx(w, abs=2e-7)
    assert solve_z_prime(cla, SAT, 0.25, h, 6.0).hermite(x) == pytest.approx(z, abs=2e-7)


@pytest.mark.parametrize("model", [cl_a(), bm_a()])
def test_solutions_positive_and_consistent(model):
    for rate in (SAT, SmoothLinearClamp(0.4, 0.3)):
        g = solve_w_prime(model, rate, 0.25, 0.0, H, 6.0)
        z = solve_z_prime(model, rate, 0.25, H, 6.0)
        assert np.all(g.values >= 0.0) and np.all(g.derivatives >= 0.0)
        assert np.all(z.values >= 1.0) and np.all(z.derivatives >= 0.0)
        assert g.self_consistency()[0] <= 5 * H**2


def test_neumann_single_term_closed_form(bma):
    # BM-A, q = 0: W' = 2 exp(-2x), one step of size delta at b, Xi = 1:
    # g + K g = 2 exp(-2x) + 4 delta (x - b) exp(-2x) for x >= b
    b, delta = 1.0, 0.5
    rate = StepProfile((b,), (delta,))
    k = VolterraKernel.build(bma, rate, 0.0)
    sol, _ = neumann_apply(k, ForcingTerm.w_prime(k, 0.0), 1, h=2.0**-8, x_max=4.0)
    x = sol.x
    exact = 2 * np.exp(-2 * x) + 4 * delta * np.clip(x - b, 0.0, None) * np.exp(-2 * x)
    np.testing.assert_allclose(sol.derivatives, exact, atol=2e-5)


def test_neumann_iterates_non_decreasing(cla):
    k = VolterraKernel.build(cla, SAT, 0.25)
    sol, _ = neumann_apply(k, ForcingTerm.w_prime(k, 0.0), 6, h=2.0**-7, x_max=5.0)
    it = sol.meta["iterates"]
    assert np.all(np.diff(it, axis=0) >= -1e-15)


def test_neumann_matches_marching(cla):
    k = VolterraKernel.build(cla, SAT, 0.25)
    f = ForcingTerm.w_prime(k, 0.0)
    march = solve(k, f, 2.0**-8, 5.0)
    neu, bound = neumann_apply(k, f, 12, h=2.0**-8, x_max=5.0)
    assert np.abs(neu.derivatives - march.derivatives).max() <= bound + 1e-12
    with pytest.raises(DomainError):
        neumann_apply(k, f, 0)


def test_majorant_partial_sums_grow(cla):
    k = VolterraKernel.build(cla, SAT, 0.25)
    maj = majorant(k, 5.0, 2.0**-7, 640)
    partial = [maj.partial(L) for L in range(1, 6)]
    assert all(np.all(b >= a) for a, b in zip(partial, partial[1:]))
    assert np.all(maj.remainder(3) >= 0.0)


def test_kernel_iterates_under_majorant(cla):
    k = VolterraKernel.build(cla, SAT, 0.25)
    ratios = kernel_iterate_check(k, 5.0)
    assert all(r <= 1 + 1e-8 for r in ratios.values())


def test_richardson_estimate_tracks_error(cla):
    fine, est = richardson_error(lambda h: solve_w_prime(cla, SAT, 0.0, 0.0, h, 6.0), 2.0**-8)
    ref = solve_w_prime(cla, SAT, 0.0, 0.0, 2.0**-11, 6.0)
    true = np.abs(fine.derivatives - ref.derivatives[::8])
    assert np.all(true <= 1.5 * est + 1e-12)


def test_approximate_profile_dyadic():
    # mesh l 2^-n for l = 1..n 2^n
    p = approximate_profile(SAT, 1)
    assert p.barriers == (0.5, 1.0)
    expected = np.diff(SAT.value(np.array([0.0, 0.5, 1.0])))
    np.testing.assert_allclose(p.deltas, expected, atol=1e-15)
    for n in (1, 3):
        assert approximate_profile(SAT, n).value(2.0**-n * 0.999) == 0.0


@given(n=st.integers(1, 5), x=st.floats(0.0, 8.0))
def test_approximations_increase_to_rate(n, x):
    lo, hi = approximate_profile(SAT, n), approximate_profile(SAT, n + 1)
    assert lo.value(x) <= hi.value(x) + 1e-15 <= SAT.value(x) + 2e-15


def test_approximation_mesh_bound():
    x = np.linspace(0.0, 6.0, 2001)
    errs = []
    for n in range(1, 7):
        gap = np.abs(SAT.value(x) - approximate_profile(SAT, n).value(x)).max()
        # sup |phi'| 2^-n plus the part of phi beyond the last barrier
        assert gap <= 0.3 * 2.0**-n + (SAT.sup - SAT.value(n)) + 1e-12
        errs.append(gap)
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_convergence_report_decreases(cla):
    rows = convergence_report(cla, SAT, 0.0, n_list=(2, 4, 6), h=2.0**-8, x_max=6.0)
    errs = [r["sup_error"] for r in rows]
    assert errs[-1] < errs[0]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


def test_convergence_report_exact_for_dyadic_steps(cla):
    rate = StepProfile((0.5, 1.0), (0.1, 0.1))
    assert approximate_profile(rate, 1) == rate
    h = 2.0**-8
    rows = convergence_report(cla, rate, 0.25, n_list=(1,), h=h, x_max=6.0)
    # only the two discretizations differ
    assert rows[0]["sup_error"] <= 5 * h**2


def test_u_zero_rate_and_step(cla, two_step):
    g = u_general(cla, ZERO_RATE, 0.25, H, 4.0)
    np.testing.assert_allclose(g.values, np.exp(g.x / 3.0), rtol=1e-13)
    a = u_general(cla, two_step, 0.25, H, 5.0)
    b = build_u(cla, two_step, 0.25, H, 5.0)
    np.testing.assert_allclose(a.values, b.values[: a.n + 1], atol=1e-6)


def test_u_probe_cross_check(cla):
    a = u_general(cla, SAT, 0.25, H, 5.0)
    b = u_probe(cla, SAT, 0.25, -20.0, H, 5.0)
    assert np.abs(a.values - b.values).max() <= 1e-5 * a.values.max()


def test_u_undiscounted_uses_probe(cla):
    g = u_general(cla, SAT, 0.0, H, 5.0)
    assert g.meta["method"] == "probe"
    assert g.values[0] == pytest.approx(1.0, abs=1e-6)
    assert np.all(np.diff(g.values) >= 0.0)


def test_v_general(cla, one_step):
    assert v_general(cla, ZERO_RATE, 0.25, 1.0) == pytest.approx(math.exp(-1.0 / 3.0), abs=1e-15)
    assert v_general(cla, one_step, 0.25, 0.0) == pytest.approx(v_k(cla, one_step, 0.25, 0.0), abs=1e-6)


def test_v_general_monotone_in_rate(cla):
    # same supremum, pointwise larger drain
    late = v_general(cla, StepProfile((1.0,), (0.3,)), 0.25)
    early = v_general(cla, StepProfile((0.5,), (0.3,)), 0.25)
    assert early >= late


def test_a_of_q(cla, two_step):
    assert a_of_q(cla, ZERO_RATE, 0.25) == pytest.approx(0.9375, abs=1e-14)
    sset = build_scale_set(cla, two_step, 0.25, 0.0, H, 6.0)
    assert a_of_q(cla, two_step, 0.25) == pytest.approx(resolvent_normalizer(sset), abs=1e-5)
    with pytest.raises(DomainError):
        a_of_q(cla, two_step, 0.0)
