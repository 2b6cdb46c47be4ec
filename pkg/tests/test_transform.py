import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ellipext.elliptic_op import EllipticOperator, apply
from ellipext.errors import ConvergenceError, DomainError, EllipticityError, SingularJacobianError
from ellipext.fields import DomainSpec, ScalarField, sup_norm
from ellipext.transform import (
    Diffeomorphism,
    build_flattening_map,
    invert_at,
    jacobian_radius,
    pullback,
    pushforward_operator,
    verify_no_cross_terms,
)

A_CONST = [[2, 1], [1, 3]]


def _boundary(n, R, m=50):
    y = np.zeros((m, n))
    y[:, 0] = np.linspace(-R, R, m)
    return y


def test_pullback_examples():
    ident = Diffeomorphism.identity(2)
    pts = np.random.default_rng(0).uniform(-1, 1, (1000, 2))
    g = ScalarField.from_expr("sin(x1)*x2", 2)
    assert np.array_equal(pullback(ident, g)(pts), g(pts))
    shift = Diffeomorphism.from_exprs(["x1 + 0.5", "x2 - 1"], 2)
    assert_allclose(pullback(shift, "x1")(pts), pts[:, 0] + 0.5, rtol=0, atol=1e-15)
    # sup over samples equals sup of g over the image samples
    Tg = pullback(shift, g)
    assert sup_norm(Tg, points=pts) == sup_norm(g, points=shift(pts))


def test_pullback_range_violation():
    shift = Diffeomorphism.from_exprs(["x1 + 2", "x2"], 2)
    with pytest.raises(DomainError):
        pullback(shift, "x1", target=DomainSpec.box([-1, -1], [1, 1]))(np.zeros(2))


def test_pushforward_congruence_example():
    L = EllipticOperator(A_CONST)
    F = Diffeomorphism.from_exprs(["x1 - x2/3", "x2"], 2)
    L2 = pushforward_operator(L, F)
    A, B, C = L2.coefficients(np.array([[0.1, 0.2], [0.0, 0.0]]))
    assert_allclose(A[0], [[5 / 3, 0], [0, 3]], rtol=0, atol=1e-12)
    assert_allclose(B, 0.0, atol=1e-12)
    assert verify_no_cross_terms(L2, _boundary(2, 0.5)) <= 1e-12


def test_pushforward_identity_is_the_same_operator():
    L = EllipticOperator([["1 + x1^2", "0.2*x2"], ["0.2*x2", 2]], b=["x1", 1], c=-1, lam=0.5, Lambda=3)
    L2 = pushforward_operator(L, Diffeomorphism.identity(2))
    pts = np.random.default_rng(1).uniform(-0.5, 0.5, (20, 2))
    for got, want in zip(L2.coefficients(pts), L.coefficients(pts)):
        assert_allclose(got, want, rtol=0, atol=1e-14)


def test_defining_identity_of_the_transformed_operator():
    L1 = EllipticOperator([["1 + 0.1*x1^2", "0.3"], ["0.3", "2 + x2/5"]], b=["x2", -1], c="-x1^2", lam=0.5,
                          Lambda=3)
    F = Diffeomorphism.from_exprs(["x1 + 0.2*x2^2", "x2 + 0.1*x1*x2"], 2, valid_radius=0.8)
    L2 = pushforward_operator(L1, F)
    rng = np.random.default_rng(2)
    c = rng.uniform(-1, 1, 6)
    u2 = f"{c[0]}*x1^2 + {c[1]}*x1*x2 + {c[2]}*x2^2 + {c[3]}*x1 + {c[4]}*x2 + {c[5]}"
    u1 = pullback(F, u2)
    for x in rng.uniform(-0.4, 0.4, (5, 2)):
        lhs = apply(L2, u2, F(x), h=1e-4)
        rhs = apply(L1, u1, x, h=1e-4)
        assert abs(lhs - rhs) <= 1e-5


def test_transformed_ellipticity_constant():
    L = EllipticOperator(A_CONST)
    F = Diffeomorphism.from_exprs(["2*x1", "x2"], 2)
    L2 = pushforward_operator(L, F)
    assert_allclose(L2.lam, L.lam, rtol=1e-12)  # smallest singular value is 1
    A, _, _ = L2.coefficients(np.zeros(2))
    assert np.linalg.eigvalsh(A)[0] >= L2.lam - 1e-12


def test_invert_at_examples():
    ident = Diffeomorphism.identity(2)
    assert_allclose(invert_at(ident, [0.3, -0.2]), [0.3, -0.2])
    double = Diffeomorphism.from_exprs(["2*x1", "2*x2"], 2)
    assert_allclose(invert_at(double, [1.0, 1.0]), [0.5, 0.5], atol=1e-12)
    flat = build_flattening_map(EllipticOperator(A_CONST), 1.0).F
    xs = np.random.default_rng(3).uniform(-0.5, 0.5, (100, 2))
    assert_allclose(invert_at(flat, flat(xs)), xs, atol=1e-9)


def test_invert_at_failures():
    fold = Diffeomorphism.from_exprs(["x1^2", "x2"], 2)
    with pytest.raises(SingularJacobianError):
        invert_at(fold, [1.0, 0.0], x_guess=[0.0, 0.0])
    # no real preimage: Newton wanders without converging
    with pytest.raises(ConvergenceError):
        invert_at(fold, [-1.0, 0.0], x_guess=[0.3, 0.0])


def test_flattening_map_examples():
    diag = build_flattening_map(EllipticOperator([[1, 0], [0, 2]]), 1.0)
    assert diag.R_prime == 1.0
    assert_allclose(diag.F(np.array([0.3, 0.4])), [0.3, 0.4])
    res = build_flattening_map(EllipticOperator(A_CONST), 1.0)
    x = np.array([0.6, 0.9])
    assert_allclose(res.F(x), [0.6 - 0.3, 0.9], rtol=1e-14)
    assert_allclose(res.shear[0](x), -1 / 3)
    assert res.R_prime == 1.0
    assert_allclose(np.linalg.det(res.F.jacobian(np.zeros(2))), 1.0)


def test_flattening_map_preserves_sign_of_last_coordinate():
    L = EllipticOperator([["2 + x1^2", "1 + x1^2/10"], ["1 + x1^2/10", 3]], lam=1.0, Lambda=4)
    res = build_flattening_map(L, 0.5)
    pts = np.random.default_rng(4).uniform(-0.3, 0.3, (500, 2))
    assert np.array_equal(np.sign(res.F(pts)[:, 1]), np.sign(pts[:, 1]))


def test_flattening_map_rejects_nonpositive_ann():
    L = EllipticOperator([[1, 0], [0, "x1"]], lam=0.5, Lambda=1)
    with pytest.raises(EllipticityError):
        build_flattening_map(L, 1.0)


def test_no_cross_terms_for_variable_coefficients():
    L = EllipticOperator([["2", "1 + x1^2/10"], ["1 + x1^2/10", "3"]], lam=1.0, Lambda=3.2)
    res = build_flattening_map(L, 1.0)
    L2 = pushforward_operator(L, res.F)
    assert verify_no_cross_terms(L2, _boundary(2, 0.5 * res.R_prime)) <= 1e-8
    with pytest.raises(DomainError):
        verify_no_cross_terms(L2, np.array([[0.0, 0.1]]))


def test_no_cross_terms_with_finite_difference_map():
    # non-symbolic coefficients fall back to finite differences
    a12 = ScalarField(lambda p: 0.5 + 0.2 * np.sin(p[..., 0]), 2)
    L = EllipticOperator([[2, a12], [a12, 3]], lam=1.0, Lambda=3.0)
    res = build_flattening_map(L, 0.5)
    L2 = pushforward_operator(L, res.F)
    assert verify_no_cross_terms(L2, _boundary(2, 0.3)) <= 1e-6


def test_jacobian_radius_examples():
    assert jacobian_radius(Diffeomorphism.identity(2), 1.0) == 1.0
    affine = Diffeomorphism.from_exprs(["x1 - x2/3", "x2"], 2)
    assert jacobian_radius(affine, 1.0) == 1.0
    F = Diffeomorphism.from_exprs(["x1 + 5*x1*x2", "x2"], 2)
    r = jacobian_radius(F, 1.0, det_floor=0.5)
    # det DF = 1 + 5 x2 reaches 0.5 at x2 = -0.1
    assert 0.09 < r < 0.1 + 1e-6
    with pytest.raises(SingularJacobianError):
        jacobian_radius(Diffeomorphism.from_exprs(["x1^3", "x2"], 2), 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0.2, 0.8))
def test_newton_round_trip_on_flattening_maps(p, q, r):
    L = EllipticOperator([[2, f"{p} + {q}*x1^2"], [f"{p} + {q}*x1^2", 2]], lam=0.1, Lambda=3)
    F = build_flattening_map(L, r).F
    xs = np.random.default_rng(5).uniform(-r / 2, r / 2, (50, 2))
    assert np.max(np.abs(F.inverse(F(xs)) - xs)) <= 1e-9
