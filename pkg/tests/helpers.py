"""Admissible test functions and extension diagnostics shared by the test modules."""

import numpy as np
import sympy as sp

from ellipext import extension as ext
from ellipext.elliptic_op import EllipticOperator
from ellipext.fields import DomainSpec, ScalarField, sup_norm


def admissible_1d(a, b, rng):
    """Random ``u`` on ``[0, 1)`` with ``u(0) = 0`` and ``a u''(0) + b u'(0) = 0``."""
    p, q, k = rng.uniform(0.5, 2.0), rng.uniform(-1, 1), rng.uniform(2, 6)
    c = -b * p / (2 * a)
    # the bump factor is flat to second order at 0
    return f"({p}*x1 + {c}*x1^2 + {q}*x1^3) * exp(-{k}*x1^4)"


def admissible_halfspace(a_nn, b_n, rng):
    """Random ``u`` on ``x2 >= 0`` with ``u = 0`` and ``a_nn u_22 + b_n u_2 = 0`` at ``x2 = 0``."""
    k, m, s = rng.integers(1, 4), rng.uniform(-1, 1), rng.uniform(1, 3)
    c = -b_n / (2 * a_nn)
    return f"sin({k}*pi*x1/2 + {m}) * cos(pi*x1/2) * (x2 + {c}*x2^2) * exp(-{s}*x2^2)"


def admissible_disk(rng, degree=2):
    """Random ``u`` on the unit disk with ``u = 0`` and ``Δu = 0`` on the circle."""
    x1, x2 = sp.symbols("x1 x2")
    P = sum(rng.uniform(-1, 1) * x1**i * x2**j for i in range(degree + 1) for j in range(degree + 1 - i)) + 1
    rho = 1 - x1**2 - x2**2
    u = rho * P + rho**2 * (P + x1 * sp.diff(P, x1) + x2 * sp.diff(P, x2)) / 2
    return str(sp.expand(u)).replace("**", "^")


def extension_diagnostics(E, u, inner, outer, seam, h):
    """``(sup ratio, second-derivative seam mismatch)`` of an extension."""
    s_in = sup_norm(u, inner, h=h, refine=5)
    s_out = sup_norm(E, outer, h=h, refine=5)
    rep = ext.verify_extension_smoothness(E, seam)
    return s_out / s_in, rep.second_mismatch


def run_1d(a, b, u, negative=False, h=2e-3):
    E = ext.extend_1d(u, a, b, 1.0, strict=not negative)
    return E, extension_diagnostics(E, u, DomainSpec.box([0.0], [1.0]), DomainSpec.box([-1.0], [1.0]),
                                    ext.Seam.point_1d(), h)


def run_halfspace(L, u, h=0.02, negative=False):
    E = ext.extend_halfspace(u, L, 1.0, strict=not negative)
    tang = np.linspace(-0.8, 0.8, 7)[:, None]
    return E, extension_diagnostics(E, u, DomainSpec.half_cuboid(1.0, 2), DomainSpec.box([-1, -1], [1, 1]),
                                    ext.Seam.flat(tang, 2), h)


def run_disk(u, h=0.05, negative=False):
    L = EllipticOperator([[1, 0], [0, 1]])
    omega, charts, etas = ext.disk_atlas()
    part = ext.build_partition(etas, omega)
    E = ext.extend_global(u, L, charts, part, omega, strict=not negative)
    seam = ext.Seam.circle([0, 0], 1.0, np.linspace(0, 2 * np.pi, 13)[:-1] + 0.1)
    return E, extension_diagnostics(E, u, DomainSpec.ball([0, 0], 1.0), DomainSpec.box([-1.5, -1.5], [1.5, 1.5]),
                                    seam, h)


def as_scalar(u, dim):
    return u if isinstance(u, ScalarField) else ScalarField.from_expr(u, dim)
