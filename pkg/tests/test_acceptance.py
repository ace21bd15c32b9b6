"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""

import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from acdg import experiments as ex
from acdg import ipdg
from acdg.dg_space import DgField, DgSpace, interpolate
from acdg.mesh import build_square_mesh
from acdg.postprocess import node_average
from acdg.spectrum import gershgorin_lower_bound, linearized_operator, smallest_rayleigh
from acdg.testcases import initial_data
from acdg.timestepper import SchemeConfig, Stepper, secant_nonlinearity

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

DOMAIN = (-1.0, 1.0, -1.0, 1.0)
EPS = 0.125


def square_space(n, degree=1):
    return DgSpace(build_square_mesh(DOMAIN, n), degree)


def F(u):
    return 0.25 * (u * u - 1) ** 2


def test_secant_identity(criterion):
    rng = np.random.default_rng(1)
    a, b = rng.uniform(-3, 3, (2, 100_000))
    defect = np.abs(secant_nonlinearity(a, b) * (a - b) - (F(a) - F(b)))
    scaled = defect / np.maximum.reduce([np.ones_like(a), np.abs(a), np.abs(b)]) ** 4
    worst = float(scaled.max())
    assert criterion(1, worst <= 1e-12, f"max scaled defect {worst:.2e} over 1e5 pairs (limit 1e-12)")


def test_unconditional_energy_decay(criterion):
    base = ex.RunSpec("test1", 10, 1e-2, EPS, 0.04)
    checks = ex.energy_study(base, [10, 20], [1e-2, 1e-3, 1e-4])
    worst = max(c.max_increase for c in checks)
    failed = [(c.n, c.k, c.error) for c in checks if not c.decreasing]
    detail = f"worst relative increase {worst:.2e} over 6 (n, k) runs; failures {failed or 'none'}"
    assert criterion(2, not failed, detail)


def fitted_slope(h, e):
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def test_spatial_convergence(criterion):
    ns = [10, 20, 40]
    base = ex.RunSpec("test1", ns[0], 0.0, EPS, 0.04)
    table = ex.convergence_study(base, ns, coupling=0.25)
    assert all(r.valid for r in table.rows)
    h = [r.h for r in table.rows]
    l2 = fitted_slope(h, [r.linf_l2 for r in table.rows])
    dg = fitted_slope(h, [r.l2_h1 for r in table.rows])
    successive = ", ".join(f"{r.linf_l2_order:.3f}/{r.l2_h1_order:.3f}" for r in table.rows[1:])
    errors = ", ".join(f"{r.linf_l2:.4g}/{r.l2_h1:.4g}" for r in table.rows)
    ok = 1.7 <= l2 <= 2.3 and 0.85 <= dg <= 1.15
    detail = (f"fitted orders Linf(L2) {l2:.3f} in [1.7, 2.3], L2(H1) {dg:.3f} in [0.85, 1.15]; "
              f"successive {successive}; errors {errors}; reference n={table.reference_n}")
    assert criterion(3, ok, detail)


def test_temporal_order(criterion):
    space = square_space(40)
    u0 = initial_data("test1", EPS)
    finals = {}
    for k in (4e-4, 2e-4, 1e-4, 5e-5):
        cfg = SchemeConfig(EPS, k, 0.01, newton_tol=1e-12, newton_atol=1e-14)
        finals[k] = Stepper(space, cfg).run(u0).final
    d1 = (finals[4e-4] - finals[2e-4]).l2_norm()
    d2 = (finals[2e-4] - finals[1e-4]).l2_norm()
    d3 = (finals[1e-4] - finals[5e-5]).l2_norm()
    order = math.log2(d1 / d2)
    # diagnostic only: the next finer triple, past the stiff-mode transient
    detail = (f"Richardson order {order:.3f} in [1.7, 2.3] (differences {d1:.3e}, {d2:.3e}); "
              f"diagnostic k=2e-4,1e-4,5e-5 order {math.log2(d2 / d3):.3f}")
    assert criterion(4, 1.7 <= order <= 2.3, detail)


def test_uniqueness_regime(criterion):
    space = square_space(20)
    k = EPS**2
    stepper = Stepper(space, SchemeConfig(EPS, k, 100 * k))
    rng = np.random.default_rng(5)
    u = stepper.initial_field(initial_data("test1", EPS))
    worst_gap, worst_iter = 0.0, 0
    for _ in range(100):
        sols = []
        for _ in range(2):
            noise = rng.uniform(-1, 1, u.coeffs.shape)
            guess = u.coeffs * (1 + 0.1 * noise) + 0.05 * rng.standard_normal(u.coeffs.shape)
            res = stepper.step(u, guess=guess)
            worst_iter = max(worst_iter, res.iterations)
            sols.append(res.field)
        worst_gap = max(worst_gap, (sols[0] - sols[1]).l2_norm())
        u = sols[0]
    ok = worst_gap <= 1e-8 and worst_iter <= 8
    detail = f"max L2 gap {worst_gap:.2e} (limit 1e-8), max Newton iterations {worst_iter} (limit 8) over 100 steps"
    assert criterion(5, ok, detail)


def smallest_eigenvalue(A):
    """Shift-invert below the Gershgorin bound; the nearest eigenvalue is the smallest."""
    shift = gershgorin_lower_bound(A, np.ones(A.shape[0])) - 1.0
    return float(spla.eigsh(A.tocsc(), k=1, sigma=shift, which="LM", return_eigenvectors=False)[0])


def test_coercivity_threshold(criterion):
    factors = (1, 2, 4, 8, 16)
    thresholds = {}
    cross_check = 0.0
    for r in (1, 2):
        for n in (8, 16, 32):
            space = square_space(n, r)
            sigma_star = None
            for s in factors:
                A = ipdg.assemble_a_h(space, -1, s * r * r).matrix
                norm = float(spla.eigsh(A, k=1, which="LA", return_eigenvectors=False)[0])
                lam = smallest_eigenvalue(A)
                if n < 32:
                    dense = float(sla.eigvalsh(A.toarray(), subset_by_index=[0, 0])[0])
                    cross_check = max(cross_check, abs(dense - lam) / norm)
                if lam >= -1e-10 * norm and sigma_star is None:
                    sigma_star = s
            thresholds[(r, n)] = sigma_star
    ok = all(len({thresholds[(r, n)] for n in (8, 16, 32)}) == 1 and thresholds[(r, 8)] is not None for r in (1, 2))
    found = "; ".join(f"r={r}: " + ", ".join(f"n={n} -> {thresholds[(r, n)]} r^2" for n in (8, 16, 32))
                      for r in (1, 2))
    detail = f"smallest PSD factor {found}; dense/sparse agreement {cross_check:.1e}"
    assert cross_check <= 1e-10
    assert criterion(6, ok, detail)


def test_spectrum_lower_bound(criterion):
    report = ex.spectrum_study("test1", EPS, [10, 20, 40])
    lams = report.lambdas
    magnitude = float(np.max(np.abs(lams)))
    spread_ok = report.spread <= 0.25 * magnitude
    negative = bool(np.all(lams < 0))

    space = square_space(10)
    pure = [smallest_rayleigh(linearized_operator(space, space.constant(c), EPS), space.mass_diagonal)[0]
            for c in (1.0, -1.0)]
    zero = smallest_rayleigh(linearized_operator(space, space.zeros(), EPS), space.mass_diagonal)[0]
    analytic = min(pure) >= 0 and abs(zero + EPS**-2) <= 1e-6
    detail = (f"lambda {', '.join(f'{x:.4f}' for x in lams)} at n=10,20,40; spread {report.spread:.3f} "
              f"= {100 * report.spread / magnitude:.1f}% of max |lambda| (limit 25%); "
              f"pure phase min {min(pure):.3f}, zero background {zero:.8f} (expect {-EPS**-2:.1f})")
    assert criterion(7, negative and spread_ok and analytic, detail)


def test_mean_curvature_tracking(criterion):
    n = 64
    base = ex.RunSpec("circle", n, ex.coupled_k(n, 0.25), 0.05, 0.05, r0=0.5)
    rows = ex.interface_study(base, [0.05, 0.1], [0.0, 0.05])
    at = {r.eps: r for r in rows if r.t == 0.05}
    exact = math.sqrt(0.15)
    rel = abs(at[0.05].measured_radius - exact) / exact
    monotone = at[0.05].sup_distance <= at[0.1].sup_distance
    detail = (f"radius {at[0.05].measured_radius:.6f} vs {exact:.6f} ({100 * rel:.2f}%, limit 2%); "
              f"sup distance eps=0.05 {at[0.05].sup_distance:.4e} <= eps=0.1 {at[0.1].sup_distance:.4e}")
    assert criterion(8, rel <= 0.02 and monotone, detail)


def test_averaging_operator(criterion):
    rng = np.random.default_rng(9)
    ratios = {}
    for n in (8, 16, 32):
        space = square_space(n)
        u = DgField(space, rng.standard_normal(space.total_dofs))
        lhs = (u - node_average(u).to_dg(space)).l2_norm() ** 2
        plus, minus = u.face_traces()
        F_ = space.mesh.interior_faces
        jumps = np.sum(space.face_weights[F_] * (plus - minus)[F_] ** 2, axis=1)
        rhs = float(np.sum(space.mesh.face_length[F_] * jumps))
        ratios[n] = lhs / rhs
    C = ratios[8]
    ok = all(ratios[n] <= 2 * C for n in (16, 32))
    detail = f"C fitted at n=8: {C:.4f}; ratios n=16 {ratios[16]:.4f}, n=32 {ratios[32]:.4f} (limit 2C)"
    assert criterion(9, ok, detail)


def smooth(x1, x2):
    return np.sin(np.pi * x1) * np.cos(np.pi * x2)


def smooth_grad(x1, x2):
    return np.stack([np.pi * np.cos(np.pi * x1) * np.cos(np.pi * x2),
                     -np.pi * np.sin(np.pi * x1) * np.sin(np.pi * x2)], axis=-1)


def test_elliptic_projection(criterion):
    rng = np.random.default_rng(11)
    space = square_space(10)
    form = ipdg.assemble_a_h(space)
    G = form.matrix + ipdg.assemble_mass(space).matrix
    p = ipdg.elliptic_projection(space, smooth, form=form, grad=smooth_grad)
    rhs = ipdg.projection_rhs(space, smooth, form, smooth_grad)
    # a_h(v - P v, w) + (v - P v, w) for 20 random w, relative to |w| |rhs|
    W = rng.standard_normal((20, space.total_dofs))
    orth = float(np.max(np.abs(W @ (rhs - G @ p.coeffs)) / (np.linalg.norm(W, axis=1) * np.linalg.norm(rhs))))

    continuous = node_average(interpolate(space, lambda x, y: np.exp(x) * np.cos(2 * y))).to_dg(space)
    repro = float(np.max(np.abs(ipdg.elliptic_projection(space, continuous, form=form).coeffs - continuous.coeffs)))

    errs = []
    for n in (10, 20):
        sp_ = square_space(n)
        q = ipdg.elliptic_projection(sp_, smooth, grad=smooth_grad)
        exact = smooth(sp_.quad_points[..., 0], sp_.quad_points[..., 1])
        errs.append(math.sqrt(sp_.integrate((q.at_quadrature() - exact) ** 2)))
    order = math.log2(errs[0] / errs[1])
    ok = orth <= 1e-10 and repro <= 1e-10 and 1.7 <= order <= 2.3
    detail = f"orthogonality residual {orth:.1e}, reproduction {repro:.1e}, L2 order {order:.3f} in [1.7, 2.3]"
    assert criterion(10, ok, detail)
