import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from acdg import ipdg
from acdg.dg_space import DgField, DgSpace, interpolate
from acdg.mesh import build_square_mesh
from acdg.testcases import initial_data, smooth_relaxation
from acdg.timestepper import (
    NewtonError,
    RunError,
    SchemeConfig,
    Stepper,
    convex_splitting_energy,
    run,
    secant_derivative,
    secant_nonlinearity,
)


def F(u):
    return 0.25 * (u * u - 1) ** 2


def test_secant_examples():
    assert secant_nonlinearity(1.0, -1.0) == 0.0
    assert secant_nonlinearity(2.0, 2.0) == pytest.approx(6.0)
    assert secant_nonlinearity(1.5, 0.5) == pytest.approx(0.25)
    assert (F(1.5) - F(0.5)) / (1.5 - 0.5) == pytest.approx(0.25)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_secant_identity(a, b):
    lhs = secant_nonlinearity(a, b) * (a - b)
    assert abs(lhs - (F(a) - F(b))) <= 1e-13 * max(abs(a), abs(b), 1.0) ** 4


@given(a=st.floats(-3, 3))
def test_secant_diagonal_is_cubic(a):
    assert secant_nonlinearity(a, a) == pytest.approx(a**3 - a, abs=1e-12)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_secant_derivative_matches_finite_difference(a, b):
    h = 1e-6
    fd = (secant_nonlinearity(a + h, b) - secant_nonlinearity(a - h, b)) / (2 * h)
    assert secant_derivative(a, b) == pytest.approx(fd, abs=1e-6)


@pytest.fixture(scope="module")
def space8():
    return DgSpace(build_square_mesh((-1, 1, -1, 1), 8), 1)


def quiet_config(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SchemeConfig(**kw)


def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(eps=0.0, k=1e-3, T=1e-2)
    with pytest.raises(ValueError):
        SchemeConfig(eps=0.1, k=-1e-3, T=1e-2)
    with pytest.raises(ValueError):
        SchemeConfig(eps=0.1, k=1e-2, T=1e-3)
    with pytest.raises(ValueError):
        SchemeConfig(eps=0.1, k=1e-3, T=1e-2, init="nodal")
    cfg = SchemeConfig(eps=0.1, k=1e-3, T=1e-2)
    assert cfg.unique and cfg.penalty == 10.0 and cfg.n_steps == 10


def test_uniqueness_boundary_warns():
    eps = 0.125
    with pytest.warns(UserWarning):
        cfg = SchemeConfig(eps=eps, k=2 * eps**2, T=1.0)
    assert not cfg.unique
    assert 1 / (2 * cfg.k) - 1 / (4 * eps**2) == 0.0


def test_pure_phase_is_fixed(space8):
    stepper = Stepper(space8, SchemeConfig(eps=0.1, k=1e-3, T=1e-2))
    res = stepper.step(space8.constant(1.0))
    assert res.iterations <= 1
    assert np.allclose(res.field.coeffs, space8.constant(1.0).coeffs, atol=1e-13)


@pytest.mark.parametrize("c0", [0.0, 0.3, -0.8, 1.7])
def test_constant_state_matches_scalar_reduction(space8, c0):
    eps, k = 0.2, 1e-2
    stepper = Stepper(space8, SchemeConfig(eps=eps, k=k, T=k))
    res = stepper.step(space8.constant(c0))

    def g(c):
        return (c - c0) / k + secant_nonlinearity(c, c0) / eps**2

    expected = 0.0 if c0 == 0.0 else brentq(g, -3, 3, xtol=1e-15)
    assert np.allclose(res.field.coeffs, space8.constant(expected).coeffs, atol=1e-10)


def test_single_step_decreases_energy():
    space = DgSpace(build_square_mesh((-1, 1, -1, 1), 10), 1)
    cfg = SchemeConfig(eps=0.125, k=1e-3, T=1e-3)
    u0 = interpolate(space, initial_data("test1", 0.125))
    res = Stepper(space, cfg).step(u0)
    assert ipdg.energy_J(res.field, 0.125) <= ipdg.energy_J(u0, 0.125)


def test_step_solution_is_stationary_for_merit(space8, rng):
    eps, k = 0.25, 1e-2
    cfg = SchemeConfig(eps=eps, k=k, T=k)
    st_ = Stepper(space8, cfg)
    um = interpolate(space8, initial_data("circle", eps))
    res = st_.step(um)
    R0 = np.linalg.norm(st_.residual(um.coeffs, um.coeffs))
    assert np.linalg.norm(st_.residual(res.field.coeffs, um.coeffs)) <= max(cfg.newton_tol * R0, cfg.newton_atol)


def test_merit_gradient_is_residual(space8, rng):
    eps, k = 0.25, 1e-2
    cfg = SchemeConfig(eps=eps, k=k, T=k)
    st_ = Stepper(space8, cfg)
    um = DgField(space8, rng.standard_normal(space8.total_dofs))
    u = DgField(space8, rng.standard_normal(space8.total_dofs))
    v = rng.standard_normal(space8.total_dofs)
    h = 1e-5
    fd = (convex_splitting_energy(u + DgField(space8, h * v), um, cfg)
          - convex_splitting_energy(u - DgField(space8, h * v), um, cfg)) / (2 * h)
    assert fd == pytest.approx(v @ st_.residual(u.coeffs, um.coeffs), rel=1e-6)


def test_mass_change_matches_reaction(space8):
    eps, k = 0.2, 5e-3
    st_ = Stepper(space8, SchemeConfig(eps=eps, k=k, T=k))
    res = st_.step(interpolate(space8, initial_data("test1", eps)))
    assert res.mass_change / k == pytest.approx(-res.reaction / eps**2, rel=1e-10, abs=1e-10)


def test_perturbed_guesses_agree(space8, rng):
    eps = 0.125
    k = eps**2
    st_ = Stepper(space8, SchemeConfig(eps=eps, k=k, T=k))
    um = interpolate(space8, initial_data("test1", eps))
    sols = []
    for _ in range(2):
        guess = um.coeffs * (1 + 0.1 * rng.uniform(-1, 1, um.coeffs.shape))
        sols.append(st_.step(um, guess=guess).field)
    assert (sols[0] - sols[1]).l2_norm() <= 1e-8


def test_newton_tail_is_quadratic(space8):
    eps = 0.125
    st_ = Stepper(space8, SchemeConfig(eps=eps, k=1e-2, T=1e-2, newton_tol=1e-14, newton_atol=1e-15))
    hist = st_.step(interpolate(space8, initial_data("test1", eps))).history
    for r_prev, r_next in zip(hist, hist[1:]):
        if 1e-12 < r_prev <= 1e-4:
            assert r_next / r_prev <= 0.1


def test_newton_failure_carries_history(space8):
    cfg = SchemeConfig(eps=0.125, k=1e-2, T=1e-2, newton_max_iter=1, newton_tol=1e-15, newton_atol=0.0)
    with pytest.raises(NewtonError) as info:
        Stepper(space8, cfg).step(interpolate(space8, initial_data("test1", 0.125)))
    assert len(info.value.history) == 2


def test_run_failure_keeps_partial_trace(space8):
    cfg = SchemeConfig(eps=0.125, k=1e-2, T=3e-2, newton_max_iter=0)
    with pytest.raises(RunError) as info:
        run(initial_data("test1", 0.125), space8, cfg)
    assert info.value.step == 1
    assert len(info.value.trace.records) == 1


def test_constant_trajectory_has_flat_energy(space8):
    result = run(space8.constant(1.0), space8, SchemeConfig(eps=0.1, k=1e-2, T=5e-2))
    assert np.allclose(result.final.coeffs, space8.constant(1.0).coeffs, atol=1e-13)
    assert np.allclose(result.trace.J, 0.0, atol=1e-12)


def test_energy_trace_columns_are_consistent(space8):
    eps = 0.15
    result = run(initial_data("test1", eps), space8, SchemeConfig(eps=eps, k=1e-3, T=5e-3))
    tr = result.trace
    J = tr.column("phi") + tr.column("potential") / eps**2
    assert np.allclose(tr.J, J, rtol=1e-12)
    assert tr.J[-1] == pytest.approx(ipdg.energy_J(result.final, eps), rel=1e-12)
    assert np.all(np.diff(tr.J) <= 1e-10 * (1 + np.abs(tr.J[:-1])))
    dis = tr.column("dissipation")
    assert np.isnan(dis[0]) and np.allclose(dis[1:], np.diff(tr.J) / 1e-3)


def test_trace_csv(tmp_path, space8):
    result = run(initial_data("test1", 0.2), space8, SchemeConfig(eps=0.2, k=1e-3, T=2e-3))
    path = tmp_path / "e.csv"
    result.trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,time,phi,potential,J,I,dissipation"
    assert len(lines) == 4


def test_last_step_is_shortened(space8):
    result = run(initial_data("test1", 0.2), space8, SchemeConfig(eps=0.2, k=1e-3, T=2.5e-3))
    assert result.shortened_last_step
    assert result.trace.records[-1].time == pytest.approx(2.5e-3)
    assert len(result.trace.records) == 4


def test_snapshots_are_interpolated_copies(space8):
    cfg = SchemeConfig(eps=0.2, k=1e-3, T=3e-3)
    kept = {}
    result = Stepper(space8, cfg).run(initial_data("test1", 0.2), snapshots=[0.0, 1.5e-3, 3e-3],
                                      callback=lambda m, t, u: kept.setdefault(m, u.coeffs.copy()))
    assert set(result.snapshots) == {0.0, 1.5e-3, 3e-3}
    assert np.allclose(result.snapshots[1.5e-3].coeffs, 0.5 * (kept[1] + kept[2]))
    assert np.allclose(result.snapshots[3e-3].coeffs, result.final.coeffs)
    result.snapshots[3e-3].coeffs[:] = 0
    assert np.abs(result.final.coeffs).max() > 0


def test_snapshot_outside_horizon_rejected(space8):
    with pytest.raises(ValueError):
        run(initial_data("test1", 0.2), space8, SchemeConfig(eps=0.2, k=1e-3, T=2e-3), snapshots=[0.5])


def test_elliptic_projection_initial_data(space8):
    cfg = SchemeConfig(eps=0.2, k=1e-3, T=1e-3, init="elliptic-projection")
    u0 = initial_data("test1", 0.2)
    first = Stepper(space8, cfg).initial_field(u0)
    assert np.allclose(first.coeffs, ipdg.elliptic_projection(space8, u0).coeffs)


def test_nonsymmetric_form_steps_with_gmres(space8):
    cfg = quiet_config(eps=0.2, k=1e-3, T=2e-3, lam=1)
    result = run(initial_data("test1", 0.2), space8, cfg)
    assert np.isfinite(result.final.coeffs).all()


def test_temporal_order_two_on_smooth_data(space8):
    finals = {}
    for k in (2e-3, 1e-3, 5e-4):
        cfg = SchemeConfig(eps=0.5, k=k, T=0.04, newton_tol=1e-13, newton_atol=1e-15)
        finals[k] = run(smooth_relaxation(), space8, cfg).final
    e1 = (finals[2e-3] - finals[1e-3]).l2_norm()
    e2 = (finals[1e-3] - finals[5e-4]).l2_norm()
    assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.2)
