import math

import numpy as np
import pytest

from refracted_levy.errors import DomainError, SchemeModelMismatch
from refracted_levy.fluctuation import ExitQuery, machinery, resolvent_mass, two_sided_up
from refracted_levy.levy_model import JumpSpec, LevyModel, SmoothSaturating, StepProfile, ZERO_RATE, bm_a, cl_a, jd_c, mean
from refracted_levy.simulator import (
    EULER,
    EVENT,
    PathConfig,
    StepFlow,
    TableFlow,
    chunk_rng,
    coupling_monotonicity,
    drift_estimate,
    mc_exit,
    mc_exits,
    mc_occupation,
    simulate_path,
)

BM_EXIT = (1 - math.exp(-2)) / (1 - math.exp(-4))


def test_path_config_validation():
    with pytest.raises(DomainError):
        PathConfig(h_sim=0.0)
    with pytest.raises(DomainError):
        PathConfig(scheme="rk4")


def test_golden_first_jump(cla, two_step):
    rec = simulate_path(cla, two_step, 1.5, PathConfig(horizon=5.0, seed=42))
    assert rec.jump_times[0] == 0.3349552948715552
    assert rec.jump_sizes[0] == 0.876459297572374


def test_streams_are_reproducible():
    a = chunk_rng(7, 3).random(4)
    b = chunk_rng(7, 3).random(4)
    c = chunk_rng(7, 4).random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_deterministic_flow_kinks_at_barrier(two_step):
    drift_only = LevyModel(1.5, 0.0, JumpSpec.none())
    rec = simulate_path(drift_only, two_step, 1.5, PathConfig(horizon=2.0))
    # slope 1.4 from 1.5 up to 2, then 1.2
    t_cross = 0.5 / 1.4
    assert np.any(np.isclose(rec.t, t_cross, rtol=0, atol=1e-14))
    assert rec.u[-1] == pytest.approx(2.0 + 1.2 * (2.0 - t_cross), abs=1e-12)


def test_flows_invert(two_step):
    for flow in (StepFlow(1.5, two_step), TableFlow(1.5, SmoothSaturating(0.3, 1.0))):
        u = np.linspace(-3.0, 20.0, 97)
        np.testing.assert_allclose(flow.G_inv(flow.G(u)), u, atol=1e-9)


def test_zero_rate_is_identity_coupling(cla):
    rec = simulate_path(cla, ZERO_RATE, 1.0, PathConfig(horizon=20.0, seed=5))
    np.testing.assert_allclose(rec.u, rec.x, atol=1e-12)


def test_integrated_identity_at_jump_epochs(cla, two_step):
    rec = simulate_path(cla, two_step, 1.5, PathConfig(horizon=200.0, seed=11))
    drained = rec.time_above @ np.asarray(two_step.deltas)
    err = np.abs(rec.u - (rec.x - drained))
    assert err.max() <= 1e-12 * max(1.0, np.abs(rec.x).max())
    assert len(rec.jump_times) > 50


def test_bit_identical_estimates(cla, two_step):
    cfg = PathConfig(seed=9)
    a = mc_exit(cla, two_step, 1.5, 0.0, 3.0, 0.25, 3000, cfg)
    b = mc_exit(cla, two_step, 1.5, 0.0, 3.0, 0.25, 3000, cfg)
    assert a.to_dict() == b.to_dict()


def test_start_at_upper_barrier(cla, two_step):
    est = mc_exit(cla, two_step, 3.0, 0.0, 3.0, 0.25, 100, PathConfig())
    assert est.mean == 1.0 and est.std_error == 0.0


def test_drift_sanity(cla):
    est = drift_estimate(cla, 10_000, PathConfig(horizon=50.0, seed=2))
    assert est.within(mean(cla))


def test_event_scheme_needs_bounded_variation(bma):
    with pytest.raises(SchemeModelMismatch):
        simulate_path(bma, ZERO_RATE, 1.0, PathConfig(scheme=EVENT))
    with pytest.raises(SchemeModelMismatch):
        coupling_monotonicity(bma, SmoothSaturating(0.3, 1.0), (2, 3), PathConfig())


def test_exit_against_analytic(cla, two_step):
    est = mc_exits(cla, two_step, 1.5, 0.0, 3.0, 0.25, 20_000, PathConfig(seed=4))
    m = machinery(cla, two_step, 0.25)
    assert est["two_sided_up"].within(two_sided_up(ExitQuery(1.5, 0.0, 3.0, 0.25), m))
    assert est["two_sided_up"].mean + est["two_sided_down"].mean <= 1.0


def test_euler_bias_shrinks(bma):
    bias = []
    for h in (0.04, 0.01):
        cfg = PathConfig(horizon=30.0, h_sim=h, seed=3, scheme=EULER)
        bias.append(mc_exit(bma, ZERO_RATE, 1.0, 0.0, 2.0, 0.0, 20_000, cfg).mean - BM_EXIT)
    assert abs(bias[1]) < abs(bias[0])


def test_euler_path_jump_diffusion():
    rec = simulate_path(jd_c(), StepProfile((1.0,), (0.1,)), 1.0, PathConfig(horizon=5.0, h_sim=1e-2, scheme=EULER))
    assert len(rec.t) == 501 and np.all(np.isfinite(rec.u))
    assert np.all(rec.u <= rec.x + 1e-12)


def test_occupation_outside_band_is_zero(cla, one_step):
    est = mc_occupation(cla, one_step, 1.5, "two_barrier", (3.5, 4.0), 0.25, 2000, PathConfig(), d=0.0, a=3.0)
    assert est.mean == 0.0 and est.std_error == 0.0


def test_occupation_matches_resolvent(cla, one_step):
    m = machinery(cla, one_step, 0.25)
    exact, _ = resolvent_mass(ExitQuery(1.5, 0.0, 3.0, 0.25), "two_barrier", m, 1.0, 1.5)
    est = mc_occupation(cla, one_step, 1.5, "two_barrier", (1.0, 1.5), 0.25, 20_000, PathConfig(seed=8), d=0.0, a=3.0)
    assert est.within(exact)


def test_free_occupation_normalized(cla):
    est = mc_occupation(cla, ZERO_RATE, 1.0, "free", (-math.inf, math.inf), 0.25, 2000, PathConfig(horizon=80.0))
    assert 0.25 * est.mean == pytest.approx(1.0, abs=1e-6)


def test_coupling_trivial_when_levels_agree(cla):
    rate = StepProfile((0.5, 1.0), (0.1, 0.1))
    rep = coupling_monotonicity(cla, rate, (1, 2), PathConfig(horizon=20.0), n_paths=200)
    assert rep.max_violation == 0.0


def test_coupling_ordered(cla):
    rep = coupling_monotonicity(cla, SmoothSaturating(0.3, 1.0), (2, 3), PathConfig(horizon=20.0), n_paths=1000)
    assert rep.max_violation <= 1e-9
