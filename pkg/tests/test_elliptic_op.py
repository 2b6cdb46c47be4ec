import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ellipext.elliptic_op import (
    EllipticOperator,
    apply,
    build_barrier,
    build_comparison_pair,
    dissipativity_margin,
    interior_sup_bound,
    max_principle_check,
    verify_ellipticity,
)
from ellipext.errors import DomainError, EllipticityError, ParameterError
from ellipext.fields import DomainSpec, GridFunction

LAP2 = EllipticOperator([[1, 0], [0, 1]])
LAP1 = EllipticOperator([[1]])
SQUARE = DomainSpec.box([0, 0], [1, 1])
UNIT = DomainSpec.box([0.0], [1.0])


def test_apply_examples():
    x = np.array([0.3, -0.7])
    assert_allclose(apply(LAP2, "(x1^2 + x2^2)/2", x, h=1e-4), 2.0, atol=1e-6)
    assert abs(apply(LAP2, "x1", x, h=1e-4)) < 1e-8
    L = EllipticOperator([[2, 1], [1, 3]])
    assert_allclose(apply(L, "x1*x2", x, h=1e-4), 2.0, atol=1e-6)


def test_apply_field_is_exact_for_expressions():
    L = EllipticOperator([[2, 1], [1, 3]], b=[1, "x1"], c=-1, lam=1.0, Lambda=3.0)
    Lu = L.apply_field("x1^2*x2")
    x = np.array([0.4, 0.9])
    # 2*2*x2 + 2*1*2*x1 + 1*2*x1*x2 + x1*x1^2 - x1^2*x2
    exact = 4 * 0.9 + 4 * 0.4 + 2 * 0.4 * 0.9 + 0.4**3 - 0.16 * 0.9
    assert_allclose(Lu(x), exact, rtol=1e-14)
    assert_allclose(apply(L, "x1^2*x2", x, h=1e-4), exact, atol=1e-6)


def test_apply_on_grid_nodes():
    g = GridFunction.sample("x1^2 + 3*x2^2", SQUARE, 0.05)
    assert_allclose(LAP2._apply_node(g, (10, 10)), 8.0, atol=1e-9)


def test_symmetrised_coefficients_and_constants():
    L = EllipticOperator([[2, 0], [2, 3]])
    A, _, _ = L.coefficients(np.zeros(2))
    assert_allclose(A, [[2, 1], [1, 3]])
    assert_allclose(L.lam, (5 - math.sqrt(5)) / 2, rtol=1e-12)
    assert L.Lambda == 3.0
    with pytest.raises(ParameterError):
        EllipticOperator([["1 + x1^2", 0], [0, 1]])
    with pytest.raises(EllipticityError):
        EllipticOperator([[-1]])


def test_verify_ellipticity_examples():
    rep = verify_ellipticity(LAP2, SQUARE)
    assert_allclose(rep.lambda_est, 1.0, atol=1e-12) and rep.ok
    rep = verify_ellipticity(EllipticOperator([[2, 1], [1, 3]]), SQUARE, n_directions=512)
    assert abs(rep.lambda_est - (5 - math.sqrt(5)) / 2) < 1e-3
    degenerate = EllipticOperator([[1, 0], [0, 0]], lam=1.0, Lambda=1.0)
    assert not verify_ellipticity(degenerate, SQUARE).ok
    variable = EllipticOperator([["1 + x1^2", 0], [0, 1]], lam=1.0, Lambda=2.0)
    rep = verify_ellipticity(variable, SQUARE)
    assert rep.ok and rep.bounds_ok


def test_dissipativity_margin_examples():
    u = GridFunction.sample("sin(pi*x1)", UNIT, 1e-3)
    rep = dissipativity_margin(LAP1, u)
    assert_allclose(rep.x_star, [0.5], atol=1e-12)
    assert abs(rep.margin + math.pi**2) < 0.05
    neg = dissipativity_margin(LAP1, u.with_values(-u.values))
    assert_allclose(neg.margin, rep.margin, rtol=1e-12)
    shifted = EllipticOperator([[1]], c=1)
    rep = dissipativity_margin(shifted, u)
    assert rep.omega == 1.0
    assert rep.margin - rep.omega * rep.u_star <= 0 and rep.ok


def test_dissipativity_margin_errors():
    with pytest.raises(ParameterError):
        dissipativity_margin(LAP1, GridFunction(np.zeros(11), 0.1))
    with pytest.raises(DomainError):
        dissipativity_margin(LAP1, GridFunction.sample("1 + x1", UNIT, 0.1))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(-2, 2), st.floats(-3, 0))
def test_dissipativity_margin_on_sine_products(k, m, b1, c):
    L = EllipticOperator([[1, 0], [0, 2]], b=[b1, 0], c=c)
    u = GridFunction.sample(f"sin({k}*pi*x1)*sin({m}*pi*x2)", SQUARE, 0.02)
    rep = dissipativity_margin(L, u)
    assert rep.margin <= 1e-6


def test_comparison_pair_example_from_laplacian():
    pair = build_comparison_pair(LAP1, -1.0, 0.0, UNIT, h=0.01)
    assert pair.gamma == 2.0 and pair.slab_width == 1.0
    x = np.linspace(0, 1, 11)[:, None]
    assert_allclose(pair.v_plus(x), math.e**2 - np.exp(2 * x[:, 0]), rtol=1e-12, atol=1e-14)
    assert_allclose(pair.v_minus(x), -pair.v_plus(x))
    # L v+ = -gamma^2 e^{gamma x}
    assert_allclose(LAP1.apply_field(pair.v_plus)(x), -4 * np.exp(2 * x[:, 0]), rtol=1e-12)


def test_comparison_pair_without_forcing_is_constant():
    pair = build_comparison_pair(LAP2, 0.0, "x1 - 2*x2", SQUARE)
    pts = SQUARE.sample_interior(20)
    assert_allclose(pair.v_plus(pts), 2.0, rtol=1e-12)


def test_comparison_pair_needs_nonpositive_c():
    with pytest.raises(EllipticityError, match="shift"):
        build_comparison_pair(EllipticOperator([[1]], c=0.5), 1.0, 0.0, UNIT)


def test_interior_sup_bound_examples():
    assert_allclose(interior_sup_bound(LAP1, -1.0, 0.0, UNIT), math.e**2 - 1, rtol=1e-12)
    assert_allclose(interior_sup_bound(LAP2, 0.0, "x1", SQUARE), 1.0, rtol=1e-12)
    # the parabola x(1-x)/2 solves u'' = -1 with sup 1/8
    assert 0.125 <= interior_sup_bound(LAP1, -1.0, 0.0, UNIT)


def test_interior_sup_bound_monotone_in_constants():
    L = EllipticOperator([[2, 0], [0, 2]], b=[1, 0])
    values = {}
    for lam in (0.5, 1.0, 2.0):
        for Lam in (2.0, 4.0, 8.0):
            values[lam, Lam] = interior_sup_bound(L, "1 + x2", 0.3, SQUARE, lam=lam, Lambda=Lam)
    for Lam in (2.0, 4.0, 8.0):
        assert values[0.5, Lam] >= values[1.0, Lam] >= values[2.0, Lam]
    for lam in (0.5, 1.0, 2.0):
        assert values[lam, 2.0] <= values[lam, 4.0] <= values[lam, 8.0]


def test_barrier_on_disk():
    disk = DomainSpec.ball([0, 0], 1.0)
    x0 = np.array([1.0, 0.0])
    net = build_barrier(LAP2, 0.0, "x1", x0, [2.0, 0.0], 1.0, domain=disk, h=0.05)
    assert net.w(x0) == 0.0
    pts = disk.sample_interior(500)
    assert np.all(net.w(pts) > 0)
    assert net.max_Lw <= -1 + 1e-6
    for eps, (wp, wm) in net.nets.items():
        assert wm(x0) <= 1.0 <= wp(x0)
        assert wp(x0) - 1.0 <= eps + 1e-12
        bnd = disk.sample_boundary(200)
        assert np.all(wp(bnd) >= bnd[:, 0] - 1e-12) and np.all(wm(bnd) <= bnd[:, 0] + 1e-12)


def test_barrier_rejects_failed_sphere_condition():
    with pytest.raises(DomainError):
        build_barrier(LAP2, 0.0, 0.0, [1.0, 0.0], [1.5, 0.0], 1.0, domain=DomainSpec.ball([0, 0], 1.0))


def test_barrier_with_drift_and_variable_coefficients():
    L = EllipticOperator([["2 + x1*x2", 0], [0, 1]], b=[1, -1], c=-0.5, lam=1.0, Lambda=3.0)
    x0 = np.array([0.5, 0.0])
    net = build_barrier(L, "x1", "x2^2", x0, [0.5, -1.0], 1.0, domain=SQUARE, h=0.05)
    pts = SQUARE.sample_interior(300)
    assert np.max(net.Lw(L, pts)) <= -1 + 1e-6
    assert net.w(x0) == 0.0


def test_max_principle_examples():
    grid = GridFunction.sample("x1", SQUARE, 0.05)
    rep = max_principle_check(grid, LAP2, kind="solution")
    assert rep.ok and rep.worst_violation <= 1e-9
    rep = max_principle_check("x1*(1 - x1)", LAP1, domain=UNIT, kind="super")
    assert rep.ok
    bad = max_principle_check("x1*(1 - x1)", LAP1, domain=UNIT, kind="sub")
    assert not bad.ok and bad.worst_violation > 0.2
    with pytest.raises(ParameterError):
        max_principle_check(grid, LAP2, kind="other")


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_harmonic_polynomials_satisfy_max_principle(p, q, r, s):
    u = f"{p}*x1 + {q}*x2 + {r}*(x1^2 - x2^2) + {s}*x1*x2"
    rep = max_principle_check(GridFunction.sample(u, SQUARE, 0.05), LAP2, kind="solution")
    assert rep.ok
