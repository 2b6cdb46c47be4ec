import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ellipext import extension as ext
from ellipext.elliptic_op import EllipticOperator
from ellipext.errors import AdmissibilityError, DomainError, ParameterError
from ellipext.fields import DomainSpec, ScalarField

from helpers import admissible_1d, admissible_disk, admissible_halfspace, run_1d, run_disk, run_halfspace


def _fd(f, s, k, h=1e-4):
    if k == 1:
        return (f(s + h) - f(s - h)) / (2 * h)
    return (f(s + h) - 2 * f(s) + f(s - h)) / h**2


def test_reflection_function_examples():
    s = np.linspace(-1, 1, 11)
    assert_allclose(ext.reflection_function(1.0, 0.0, s), -s)
    assert_allclose(ext.reflection_function(2.0, 1.0, -1.0), 1.5)
    with pytest.raises(ParameterError):
        ext.reflection_function(0.0, 1.0, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10), st.floats(-10, 10))
def test_reflection_identities(a, b):
    F = lambda s: ext.reflection_function(a, b, s)  # noqa: E731
    assert F(0.0) == 0.0
    assert abs(_fd(F, 0.0, 1) + 1) <= 1e-6
    assert abs(_fd(F, 0.0, 2) - 2 * b / a) <= 1e-6 * max(1.0, abs(b / a))


def test_reflection_delta_examples():
    assert_allclose(ext.reflection_delta(1, 0, 2), 1.8)
    assert_allclose(ext.reflection_delta(1, -1, 2), 0.9)
    assert round(ext.reflection_delta(1, 1, 1), 3) == 0.556
    with pytest.raises(ParameterError):
        ext.reflection_delta(-1, 0, 1)
    with pytest.raises(ParameterError):
        ext.reflection_delta(1, 0, 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.floats(-10, 10), st.floats(0.1, 5))
def test_reflection_maps_depth_into_range(a, b, R):
    p = ext.ReflectionParams.build(a, b, R)
    s = -p.delta * np.linspace(0, 1, 500, endpoint=False)
    img = ext.reflection_function(a, b, s)
    assert np.all(img >= 0) and np.all(img < R)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.01, 5), st.floats(0.1, 3))
def test_delta_increases_with_a_for_positive_drift(a, b, R):
    assert ext.reflection_delta(a, b, R) <= ext.reflection_delta(2 * a, b, R) + 1e-15


def test_common_delta_examples():
    assert round(ext.common_delta(1, 1, 1), 3) == 0.556
    assert_allclose(ext.common_delta(1, 0, 2), 1.8)
    with pytest.raises(ParameterError):
        ext.common_delta(0, 1, 1)


def test_seam_cutoff_levels():
    eta = ext.seam_cutoff(0.4)
    assert_allclose(eta(np.array([[-0.2], [-0.1], [0.0]])), 1.0)
    assert_allclose(eta(np.array([[-0.3], [-0.35]])), 0.0)


def test_extend_1d_odd_reflection():
    u = "sin(pi*x1)"
    E = ext.extend_1d(u, 1.0, 0.0, 1.0)
    s = np.linspace(-0.4, 0, 9)[:, None]
    assert_allclose(E(s), np.sin(np.pi * s[:, 0]), atol=1e-15)
    assert E.delta == pytest.approx(0.9)


def test_extend_1d_squeezed_seam():
    u = "x1 - x1^2"  # u'' + 2u' = 0 at 0
    E, (ratio, seam) = run_1d(1.0, 2.0, u)
    assert abs(ratio - 1) <= 1e-6 and seam <= 1e-3
    rep = ext.verify_extension_smoothness(E, ext.Seam.point_1d())
    assert rep.value_mismatch <= 1e-12 and rep.first_mismatch <= 1e-6
    # the squeezed map sends s = -0.2 to 0.2 + 2*0.04
    assert_allclose(E(np.array([[-0.2]])), -(0.28 - 0.28**2))


def test_extend_1d_rejects_inadmissible():
    with pytest.raises(AdmissibilityError) as err:
        ext.extend_1d("x1", 1.0, 2.0, 1.0)
    assert err.value.residual == pytest.approx(2.0)
    with pytest.raises(AdmissibilityError):
        ext.extend_1d("1 + x1", 1.0, 0.0, 1.0)


@pytest.mark.parametrize("a,b", [(1.0, 0.0), (2.0, 3.0), (0.5, -2.0), (1.0, 5.0)])
def test_extend_1d_random_admissible(a, b):
    u = admissible_1d(a, b, np.random.default_rng(int(10 * a + b + 10)))
    _, (ratio, seam) = run_1d(a, b, u)
    assert abs(ratio - 1) <= 1e-6 and seam <= 1e-3


def test_extend_1d_negative_control():
    u = admissible_1d(1.0, 0.0, np.random.default_rng(1))  # admissible for b = 0 only
    E, (_, seam) = run_1d(1.0, 2.0, u, negative=True)
    assert E.residual > 1.0
    assert seam >= 0.1 * E.residual


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 3), st.floats(-3, 3))
def test_extension_is_linear(p, q, a, b):
    rng = np.random.default_rng(0)
    u, v = ScalarField.from_expr(admissible_1d(a, b, rng), 1), ScalarField.from_expr(admissible_1d(a, b, rng), 1)
    w = ScalarField(lambda x: p * u(x) + q * v(x), 1)
    s = np.linspace(-0.9, 1, 50)[:, None]
    lhs = ext.extend_1d(w, a, b, 1.0, strict=False)(s)
    rhs = p * ext.extend_1d(u, a, b, 1.0)(s) + q * ext.extend_1d(v, a, b, 1.0)(s)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@pytest.mark.parametrize("bn", [0.0, 2.0, -1.5])
def test_extend_halfspace_admissible(bn):
    L = EllipticOperator([["1 + x1^2/4", 0], [0, 2]], b=["x1", bn], c=-1, lam=1.0, Lambda=2.0)
    u = admissible_halfspace(2.0, bn, np.random.default_rng(3))
    E, (ratio, seam) = run_halfspace(L, u)
    assert E.residual <= 1e-6
    assert abs(ratio - 1) <= 1e-6 and seam <= 1e-3


def test_extend_halfspace_flat_example():
    L = EllipticOperator([[1, 0], [0, 1]], b=[0, 2])
    E = ext.extend_halfspace("sin(pi*x1) * (x2 - x2^2)", L, 1.0)
    x = np.array([[0.3, -0.1]])
    assert_allclose(E(x), -math.sin(0.3 * math.pi) * (0.12 - 0.12**2))


def test_extend_halfspace_rejects_cross_terms_and_bad_data():
    L = EllipticOperator([[2, 1], [1, 3]])
    with pytest.raises(AdmissibilityError, match="flattening"):
        ext.extend_halfspace("x2", L, 1.0)
    with pytest.raises(AdmissibilityError):
        ext.extend_halfspace("x2", EllipticOperator([[1, 0], [0, 1]], b=[0, 1]), 1.0)


def test_extend_halfspace_negative_control():
    L = EllipticOperator([[1, 0], [0, 1]], b=[0, 2])
    u = "cos(pi*x1/2) * x2 * exp(-x2^2)"
    E, (_, seam) = run_halfspace(L, u, negative=True)
    assert E.residual > 0.1
    assert seam >= 0.1 * E.residual


def test_partition_of_unity_sums_to_one():
    omega, charts, etas = ext.disk_atlas()
    part = ext.build_partition(etas, omega)
    pts = omega.sample_interior(2000, np.random.default_rng(0))
    W = part.weights(pts)
    assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(W >= 0)
    far = np.array([[3.0, 0.0]])
    assert part.weights(far).sum() <= 1.0


def test_partition_detects_gaps():
    omega = DomainSpec.box([0, 0], [1, 1])
    with pytest.raises(DomainError):
        ext.build_partition([DomainSpec.ball([0, 0], 0.5)], omega)
    part = ext.build_partition([DomainSpec.box([-0.5, -0.5], [1.5, 1.5])], omega)
    assert_allclose(part.weights(np.array([[0.5, 0.5]])), [[1.0]])


def test_disk_atlas_charts_flatten_the_circle():
    omega, charts, _ = ext.disk_atlas()
    bnd = omega.sample_boundary(64, np.random.default_rng(0))
    for ch in charts:
        sel = ch.eta(bnd) > 0
        assert_allclose(ch.G(bnd[sel])[:, 1], 0.0, atol=1e-14)
        y = ch.G(bnd[sel] * 0.9)
        assert np.all(y[:, 1] > 0)
        assert_allclose(ch.G.inverse(y), bnd[sel] * 0.9, atol=1e-12)


def test_extend_global_disk():
    u = admissible_disk(np.random.default_rng(0), degree=1)
    E, (ratio, seam) = run_disk(u)
    assert abs(ratio - 1) <= 1e-6 and seam <= 1e-3
    pts = DomainSpec.ball([0, 0], 1.0).sample_interior(300, np.random.default_rng(1))
    assert_allclose(E(pts), ScalarField.from_expr(u, 2)(pts), atol=1e-12)
    omega, charts, etas = ext.disk_atlas()
    zero = ext.extend_global("0", EllipticOperator([[1, 0], [0, 1]]), charts, ext.build_partition(etas, omega), omega)
    assert np.all(zero(np.random.default_rng(2).uniform(-1.5, 1.5, (200, 2))) == 0)


def test_extend_global_rejects_inadmissible():
    omega, charts, etas = ext.disk_atlas()
    part = ext.build_partition(etas, omega)
    with pytest.raises(AdmissibilityError, match="chart"):
        ext.extend_global("1 - x1^2 - x2^2", EllipticOperator([[1, 0], [0, 1]]), charts, part, omega)


def test_smoothness_report_flags_kinks():
    rep = ext.verify_extension_smoothness(ScalarField.from_expr("abs(x1)", 1), ext.Seam.point_1d())
    assert rep.first_mismatch == pytest.approx(2.0)
    rep = ext.verify_extension_smoothness(ScalarField.from_expr("x1^3", 1), ext.Seam.point_1d(), alpha=0.5)
    assert rep.second_mismatch <= 1e-6 and rep.holder_second > 0
