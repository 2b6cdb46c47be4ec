import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import solve_bvp

from ellipext.elliptic_op import EllipticOperator
from ellipext.errors import DomainError, EllipticityError, ParameterError
from ellipext.fields import DomainSpec, GridFunction
from ellipext.solver import (
    Ball,
    Discretization,
    boundary_attainment_check,
    comparison_sandwich,
    default_cover,
    direct_solve,
    evolve,
    external_sphere,
    harmonic_lift,
    perron_solve,
    resolvent_solve,
    semigroup_defect,
)

LAP1 = EllipticOperator([[1]])
LAP2 = EllipticOperator([[1, 0], [0, 1]])
UNIT = DomainSpec.box([0.0], [1.0])
SYM = DomainSpec.box([-1.0], [1.0])
SQUARE = DomainSpec.box([0, 0], [1, 1])
DISK = DomainSpec.ball([0, 0], 1.0)


def test_direct_solve_parabola():
    sol = direct_solve(LAP1, -2.0, 0.0, UNIT, 0.01)
    x = sol.disc.interior_points[:, 0]
    assert_allclose(sol.u_int, x * (1 - x), atol=1e-12)
    assert sol.report.residual_norm <= 1e-10
    assert sol.report.bound_check["ok"]


def test_direct_solve_harmonic_on_square():
    sol = direct_solve(LAP2, 0.0, "x1", SQUARE, 0.05)
    assert_allclose(sol.u_int, sol.disc.interior_points[:, 0], atol=1e-12)
    assert sol.report.max_principle_ok


def test_direct_solve_with_drift_against_closed_form_and_scipy():
    L = EllipticOperator([[1]], b=[1])
    sol = direct_solve(L, 1.0, 0.0, UNIT, 1e-3)
    x = sol.disc.interior_points[:, 0]
    exact = x - math.e / (math.e - 1) * (1 - np.exp(-x))
    assert np.max(np.abs(sol.u_int - exact)) <= 1e-6
    # independent route: collocation BVP solver
    grid = np.linspace(0, 1, 101)
    bvp = solve_bvp(lambda t, y: np.vstack([y[1], 1 - y[1]]), lambda ya, yb: np.array([ya[0], yb[0]]), grid,
                    np.zeros((2, grid.size)), tol=1e-10)
    assert np.max(np.abs(sol.u_int - bvp.sol(x)[0])) <= 1e-6


def test_direct_solve_on_disk_uses_boundary_intersections():
    sol = direct_solve(LAP2, 4.0, 1.0, DISK, 0.05)
    r2 = np.sum(sol.disc.interior_points**2, axis=1)
    assert np.max(np.abs(sol.u_int - r2)) <= 1e-10  # quadratics are exact on Shortley-Weller stencils


def test_direct_solve_rejects_positive_c():
    with pytest.raises(EllipticityError):
        direct_solve(EllipticOperator([[1]], c=1), 0.0, 0.0, UNIT, 0.1)
    with pytest.raises(DomainError):
        Discretization(LAP2, UNIT, 0.1)


def test_discrete_operator_is_monotone_with_strong_drift():
    L = EllipticOperator([[1, 0], [0, 1]], b=[50, -30], c=-1)
    disc = Discretization(L, SQUARE, 0.05)
    assert disc.is_monotone()


def test_comparison_sandwich_holds_for_direct_solutions():
    L = EllipticOperator([[2, 0], [0, 1]], b=[1, -1], c=-0.5)
    sol = direct_solve(L, "x1 - x2", "x1*x2", SQUARE, 0.05)
    _, viol, ok = comparison_sandwich(sol, "x1 - x2", "x1*x2")
    assert ok and viol <= 1e-6


def test_harmonic_lift_examples():
    h = 0.05
    u = GridFunction.sample("1 + x1 - (1 - x1^2)", SYM, h)  # subsolution of u'' = 0
    disc = Discretization(LAP1, SYM, h)
    small = harmonic_lift(LAP1, 0.0, u, Ball(np.array([0.0]), 0.5), g="1 + x1", disc=disc)
    x = disc.mesh_points[:, 0]
    inside = np.abs(x) < 0.5
    assert_allclose(small.values[inside], 0.25 + x[inside], atol=1e-12)
    assert_allclose(small.values[~inside], u.values[~inside])
    assert np.all(small.values >= u.values - 1e-12)
    big = harmonic_lift(LAP1, 0.0, u, Ball(np.array([0.0]), 0.999), g="1 + x1", disc=disc)
    assert_allclose(big.values, 1 + x, atol=1e-12)


def test_harmonic_lift_of_a_solution_is_unchanged():
    sol = direct_solve(LAP2, -1.0, "x1", DISK, 0.1)
    lifted = harmonic_lift(LAP2, -1.0, sol.u, Ball(np.array([0.2, 0.1]), 0.5), g="x1", disc=sol.disc)
    assert np.nanmax(np.abs(lifted.values - sol.u.values)) <= 1e-12
    with pytest.raises(DomainError):
        harmonic_lift(LAP2, 0.0, sol.u, Ball(np.array([0.8, 0.0]), 0.5), disc=sol.disc)


def test_default_cover_covers_every_unknown():
    disc = Discretization(LAP2, DISK, 0.05)
    balls = default_cover(disc)
    covered = np.zeros(disc.n_unknowns, dtype=bool)
    for b in balls:
        assert float(DISK.boundary_distance(b.center)) > b.radius
        covered |= np.linalg.norm(disc.interior_points - b.center, axis=1) < b.radius
    assert covered.all()


@pytest.mark.parametrize("L,f,g,dom,h", [
    (LAP1, -2.0, "x1", UNIT, 0.01),
    (LAP2, -1.0, "x1", DISK, 0.05),
    (EllipticOperator([[1, 0], [0, 1]], b=[0.5, 0], c=-1), "x1", "x2^2", SQUARE, 0.025),
])
def test_perron_matches_direct(L, f, g, dom, h):
    res = perron_solve(L, f, g, dom, h, tol=1e-8)
    sol = direct_solve(L, f, g, dom, h, disc=res.disc)
    assert np.max(np.abs(res.disc.from_grid(res.u) - sol.u_int)) <= 1e-5
    assert res.state.min_increment >= -1e-9
    assert np.all(np.diff(res.state.increments) <= 1e-12) or res.state.increments[-1] < 1e-8
    u = res.disc.from_grid(res.u)
    assert np.all(res.v_minus <= u + 1e-9) and np.all(u <= res.v_plus + 1e-9)


def test_perron_with_a_custom_cover():
    disc = Discretization(LAP1, UNIT, 0.02)
    cover = [Ball(np.array([c]), 0.099) for c in np.linspace(0.1, 0.9, 9)]
    res = perron_solve(LAP1, 0.0, "x1", UNIT, 0.02, cover=cover, tol=1e-10, disc=disc)
    assert_allclose(disc.from_grid(res.u), disc.interior_points[:, 0], atol=1e-8)


def test_external_sphere_examples():
    assert_allclose(external_sphere(DISK, [0.0, 1.0], 0.5), [0.0, 1.5])
    assert_allclose(external_sphere(SQUARE, [1.0, 0.5], 1.0), [2.0, 0.5])
    with pytest.raises(DomainError):
        external_sphere(SQUARE, [0.5, 0.5])


def test_boundary_attainment_on_disk():
    g = "x1^2 - x2"
    sol = direct_solve(LAP2, -1.0, g, DISK, 0.05)
    pts = DISK.sample_boundary(6, np.random.default_rng(0))
    rep = boundary_attainment_check(sol, g, LAP2, -1.0, pts)
    assert rep.ok and rep.worst_violation <= 1e-6
    assert rep.max_Lw <= -1 + 1e-6 and rep.w_at_x0 <= 1e-12
    assert all(v >= 0 for v in rep.modulus.values())


def test_boundary_attainment_negative_control():
    sol = direct_solve(LAP2, 0.0, "x1", SQUARE, 0.05)
    rep = boundary_attainment_check(sol, "x1", LAP2, 0.0, [[1.0, 0.5], [0.0, 0.5]], u_override=sol.u_int + 0.5)
    assert not rep.ok and rep.worst_violation > 0.1


def test_resolvent_closed_form():
    res = resolvent_solve(LAP1, 1.0, 1.0, UNIT, 1e-3)
    assert abs(res.sup_u - (1 - 1 / math.cosh(0.5))) <= 1e-4
    assert res.contraction_ok and res.omega == 0.0


def test_resolvent_zero_and_linearity():
    L = EllipticOperator([[1, 0], [0, 2]], b=[1, 0], c=-1)
    zero = resolvent_solve(L, 1.0, 0.0, SQUARE, 0.05)
    assert np.all(zero.u_int == 0)
    r1 = resolvent_solve(L, 2.0, "x1", SQUARE, 0.05)
    r2 = resolvent_solve(L, 2.0, "sin(x2)", SQUARE, 0.05)
    r3 = resolvent_solve(L, 2.0, "2*x1 - 3*sin(x2)", SQUARE, 0.05)
    assert_allclose(r3.u_int, 2 * r1.u_int - 3 * r2.u_int, atol=1e-12)


def test_resolvent_needs_mu_above_omega():
    with pytest.raises(ParameterError):
        resolvent_solve(LAP1, 0.0, 1.0, UNIT, 0.01)
    with pytest.raises(ParameterError):
        resolvent_solve(EllipticOperator([[1]], c=2), 1.5, 1.0, UNIT, 0.01)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(-1, 1), st.integers(1, 5), st.floats(-1, 0.5))
def test_resolvent_contraction(gap, p, k, c):
    L = EllipticOperator([[1]], b=[p], c=c)
    res = resolvent_solve(L, c + gap, f"sin({k}*x1) + {p}", UNIT, 0.02)
    assert res.omega == c
    assert res.sup_u * gap <= res.sup_f + 1e-9
    assert res.contraction_ok


def test_evolve_eigenmode_decay():
    traj = evolve(LAP1, "sin(pi*x1)", 1e-3, 0.2, UNIT, 1e-3, store_every=50)
    assert traj.times[-1] == pytest.approx(0.2)
    assert abs(traj.norms[-1] / math.exp(-math.pi**2 * 0.2) - 1) <= 0.02
    assert all(b <= a for a, b in zip(traj.norms, traj.norms[1:]))


def test_evolve_zero_and_growth():
    zero = evolve(LAP1, 0.0, 0.01, 0.1, UNIT, 0.01)
    assert all(n == 0 for n in zero.norms)
    L = EllipticOperator([[1]], c=1)
    traj = evolve(L, "x1*(1 - x1)", 0.01, 1.0, UNIT, 0.01)
    assert traj.omega == 1.0
    assert traj.growth_violation() <= 1e-12


def test_evolve_errors():
    with pytest.raises(ParameterError):
        evolve(LAP1, "sin(pi*x1)", 0.0, 1.0, UNIT, 0.01)
    with pytest.raises(ParameterError):
        evolve(EllipticOperator([[1]], c=200), "sin(pi*x1)", 0.01, 1.0, UNIT, 0.01)
    with pytest.raises(DomainError):
        evolve(LAP1, "1 + x1", 0.01, 0.1, UNIT, 0.01)


def test_semigroup_property():
    L = EllipticOperator([[1, 0], [0, 1]], b=[0.5, 0], c=-1)
    assert semigroup_defect(L, "sin(pi*x1)*sin(pi*x2)", 0.01, 0.1, SQUARE, 0.05) <= 1e-12
    with pytest.raises(ParameterError):
        semigroup_defect(LAP1, "sin(pi*x1)", 0.01, 0.125, UNIT, 0.01)
