"""Diffeomorphisms, pullbacks, transformed operators and the boundary
flattening shear that removes mixed second-order terms on ``x_n = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp
from scipy.spatial import cKDTree

from . import expr as _expr
from .elliptic_op import EllipticOperator
from .errors import ConvergenceError, DomainError, EllipticityError, ParameterError, SingularJacobianError
from .fields import DomainSpec, ScalarField, as_field, as_points, mesh_coordinates

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50
DET_SINGULAR = 1e-8


class Diffeomorphism:
    """A map ``F: R^n -> R^n`` with first and second derivatives.

    ``forward`` takes points ``(..., n)`` and returns ``(..., n)``.  The
    Jacobian is ``J[..., k, i] = d_i F_k`` and the second derivatives are
    ``H[..., k, i, j] = d_i d_j F_k``.  Without explicit derivative callables
    central differences with step ``fd_step`` are used.  Use
    :meth:`from_exprs` to get exact derivatives.
    """

    def __init__(self, forward: Callable, dim: int, jacobian: Optional[Callable] = None,
                 second_derivs: Optional[Callable] = None, valid_radius: float = math.inf,
                 valid_center=None, regularity: str = "C2,alpha", inverse_map: Optional[Callable] = None,
                 exprs: Optional[Sequence[sp.Expr]] = None, fd_step: float = 1e-5):
        self.forward = forward
        self.dim = dim
        self._jac = jacobian
        self._hess = second_derivs
        self.valid_radius = float(valid_radius)
        self.valid_center = np.zeros(dim) if valid_center is None else np.asarray(valid_center, dtype=float)
        self.regularity = regularity
        self.inverse_map = inverse_map
        self.exprs = None if exprs is None else tuple(exprs)
        self.fd_step = fd_step

    @classmethod
    def from_exprs(cls, components, dim: int, **kw) -> "Diffeomorphism":
        xs = _expr.symbols(dim)
        comps = [_expr.parse(c, dim) for c in components]
        if len(comps) != dim:
            raise ParameterError(f"need {dim} component expressions")
        fwd = [_expr.lambdify(c, dim) for c in comps]
        jac = [[_expr.lambdify(sp.diff(c, xs[i]), dim) for i in range(dim)] for c in comps]
        hes = [[[_expr.lambdify(sp.diff(c, xs[i], xs[j]), dim) for j in range(dim)] for i in range(dim)] for c in comps]

        def forward(p):
            return np.stack([f(p) for f in fwd], axis=-1)

        def jacobian(p):
            return np.stack([np.stack([d(p) for d in row], axis=-1) for row in jac], axis=-2)

        def second(p):
            return np.stack([np.stack([np.stack([d(p) for d in r], axis=-1) for r in blk], axis=-2) for blk in hes],
                            axis=-3)

        return cls(forward, dim, jacobian, second, exprs=comps, **kw)

    @classmethod
    def identity(cls, dim: int) -> "Diffeomorphism":
        return cls.from_exprs(list(_expr.symbols(dim)), dim)

    def check_valid(self, x):
        pts = as_points(x, self.dim)
        if math.isfinite(self.valid_radius):
            r = np.linalg.norm(pts - self.valid_center, axis=-1)
            if np.any(r > self.valid_radius * (1 + 1e-12)):
                bad = pts[r > self.valid_radius * (1 + 1e-12)][0]
                raise DomainError(f"point {bad.tolist()} lies outside the valid ball of radius {self.valid_radius:.6g}")
        return pts

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.forward(as_points(x, self.dim)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        if self._jac is not None:
            return np.asarray(self._jac(pts), dtype=float)
        h, e = self.fd_step, np.eye(self.dim)
        cols = [(self.forward(pts + h * e[i]) - self.forward(pts - h * e[i])) / (2 * h) for i in range(self.dim)]
        return np.stack(cols, axis=-1)

    def second_derivs(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        if self._hess is not None:
            return np.asarray(self._hess(pts), dtype=float)
        h, e = 10 * self.fd_step, np.eye(self.dim)
        n = self.dim
        out = np.empty(pts.shape[:-1] + (n, n, n))
        f0 = self.forward(pts)
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    d = (self.forward(pts + h * e[i]) - 2 * f0 + self.forward(pts - h * e[i])) / h**2
                else:
                    d = (self.forward(pts + h * (e[i] + e[j])) - self.forward(pts + h * (e[i] - e[j]))
                         - self.forward(pts - h * (e[i] - e[j])) + self.forward(pts - h * (e[i] + e[j]))) / (4 * h**2)
                out[..., :, i, j] = d
                out[..., :, j, i] = d
        return out

    def inverse(self, y, x_guess=None) -> np.ndarray:
        return invert_at(self, y, x_guess)


def invert_at(F: Diffeomorphism, y, x_guess=None) -> np.ndarray:
    """Solve ``F(x) = y`` by Newton's method (batched over leading axes).

    Converges when ``|F(x) - y| <= 1e-10``; at most 50 iterations.  An
    analytic inverse, when the map carries one, supplies the first guess.
    """
    y = as_points(y, F.dim)
    shape = y.shape
    yf = y.reshape(-1, F.dim)
    if x_guess is not None:
        x = np.broadcast_to(as_points(x_guess, F.dim), shape).reshape(-1, F.dim).copy()
    elif F.inverse_map is not None:
        x = np.asarray(F.inverse_map(yf), dtype=float).reshape(-1, F.dim).copy()
    else:
        x = yf.copy()
    res = F(x) - yf
    err = np.linalg.norm(res, axis=-1)
    for _ in range(NEWTON_MAXITER):
        active = err > NEWTON_TOL
        if not np.any(active):
            return x.reshape(shape)
        J = F.jacobian(x[active])
        det = np.linalg.det(J)
        if np.any(np.abs(det) < DET_SINGULAR):
            bad = x[active][np.abs(det) < DET_SINGULAR][0]
            raise SingularJacobianError(f"singular Jacobian at {bad.tolist()} (|det| < {DET_SINGULAR})",
                                        residual=float(err.max()))
        step = np.linalg.solve(J, res[active][..., None])[..., 0]
        x[active] -= step
        res = F(x) - yf
        err = np.linalg.norm(res, axis=-1)
    if np.any(err > NEWTON_TOL):
        raise ConvergenceError(f"Newton inversion did not converge (residual {err.max():.3e})", residual=float(err.max()))
    return x.reshape(shape)


def pullback(F: Diffeomorphism, g, target: Optional[DomainSpec] = None) -> ScalarField:
    """``g ∘ F``.  With ``target`` given, images outside it raise."""
    g = as_field(g, F.dim)

    def evaluate(p):
        img = F(p)
        if target is not None and not np.all(target.contains(img, closed=True, tol=1e-12)):
            raise DomainError("F maps a point outside the domain of g")
        return g(img)

    e = None
    if g.expr is not None and F.exprs is not None:
        e = g.expr.subs(dict(zip(_expr.symbols(F.dim), F.exprs)), simultaneous=True)
    return ScalarField(evaluate, F.dim, holder_alpha=g.holder_alpha, expr=e)


# ---------------------------------------------------------------------------
# transformed operators
# ---------------------------------------------------------------------------


def _transformed_at_x(L1: EllipticOperator, F: Diffeomorphism, x):
    """``(a~, b~, c~)`` at ``F(x)`` by the chain rule."""
    x = F.check_valid(x)
    A, B, C = L1.coefficients(x)
    J = F.jacobian(x)
    H = F.second_derivs(x)
    At = np.einsum("...ki,...ij,...lj->...kl", J, A, J)
    Bt = np.einsum("...ij,...kij->...k", A, H) + np.einsum("...i,...ki->...k", B, J)
    return At, Bt, np.array(C, dtype=float)


class TransformedOperator(EllipticOperator):
    """The operator ``L2`` with ``(L2 u)(F(x)) = (L1 (u ∘ F))(x)``.

    Coefficients at ``y`` are evaluated at ``x = F^{-1}(y)`` (Newton) unless
    they are requested at ``x`` directly via :meth:`coefficients_at_x`.
    """

    def __init__(self, base: EllipticOperator, F: Diffeomorphism, sample_points=None):
        if base.dim != F.dim:
            raise ParameterError("operator and map dimensions differ")
        self.base = base
        self.F = F
        self.dim = base.dim
        self.coeff_regularity = base.coeff_regularity
        self.alpha = base.alpha
        n = self.dim

        def comp(kind, i=None, j=None):
            def evaluate(p):
                A, B, C = self.coefficients(p)
                return A[..., i, j] if kind == "a" else (B[..., i] if kind == "b" else C)
            return ScalarField(evaluate, n)

        self.a = [[comp("a", i, j) for j in range(n)] for i in range(n)]
        self.b = [comp("b", i) for i in range(n)]
        self.c = comp("c")
        if sample_points is None:
            r = F.valid_radius if math.isfinite(F.valid_radius) else 1.0
            rng = np.random.default_rng(0)
            v = rng.standard_normal((400, n))
            v *= (r * rng.random(400) ** (1 / n) / np.linalg.norm(v, axis=1))[:, None]
            sample_points = F.valid_center + np.concatenate([v, np.zeros((1, n))])
        J = F.jacobian(sample_points)
        smin = np.linalg.svd(J, compute_uv=False)[..., -1].min()
        At, Bt, Ct = _transformed_at_x(base, F, sample_points)
        self.lam = float(base.lam * smin**2)
        self.Lambda = float(max(np.abs(At).max(), np.abs(Bt).max(), np.abs(Ct).max()))

    def coefficients_at_x(self, x):
        return _transformed_at_x(self.base, self.F, x)

    def coefficients(self, y):
        y = as_points(y, self.dim)
        return self.coefficients_at_x(self.F.inverse(y))

    def is_constant(self) -> bool:
        return False

    def is_symbolic(self) -> bool:
        return False


def pushforward_operator(L1: EllipticOperator, F: Diffeomorphism, sample_points=None) -> TransformedOperator:
    return TransformedOperator(L1, F, sample_points)


def verify_no_cross_terms(L2: TransformedOperator, boundary_samples) -> float:
    """``max |a~_in(y)|`` over samples on ``y_n = 0`` and ``i < n``."""
    y = as_points(boundary_samples, L2.dim).reshape(-1, L2.dim)
    if np.any(np.abs(y[:, -1]) > 1e-12):
        raise DomainError("samples must lie on the flattened boundary y_n = 0")
    if L2.dim == 1:
        return 0.0
    A, _, _ = L2.coefficients(y)
    return float(np.max(np.abs(A[:, :-1, -1])))


# ---------------------------------------------------------------------------
# flattening map
# ---------------------------------------------------------------------------


@dataclass
class FlatteningResult:
    F: Diffeomorphism
    R_prime: float
    shear: list  # the fields g_i, i < n, as functions of x'


def _ball_samples(dim: int, r: float, per_axis: int) -> np.ndarray:
    pts = mesh_coordinates(np.full(dim, -r), 2 * r / (per_axis - 1), (per_axis,) * dim).reshape(-1, dim)
    return pts[np.linalg.norm(pts, axis=1) <= r * (1 + 1e-12)]


def jacobian_radius(F: Diffeomorphism, R: float, det_floor: Optional[float] = None, per_axis: Optional[int] = None,
                    iterations: int = 40) -> float:
    """Largest sampled ``R' <= R`` with ``|det DF| >= det_floor`` and injective sampling on ``B_R'``.

    ``det_floor`` defaults to ``1e-3 |det DF(0)|``.
    """
    n = F.dim
    det0 = abs(float(np.linalg.det(F.jacobian(np.zeros(n)))))
    floor = 1e-3 * det0 if det_floor is None else det_floor
    if det0 < floor or det0 < DET_SINGULAR:
        raise SingularJacobianError(f"|det DF(0)| = {det0:.3g} is below the floor {floor:.3g}")
    per_axis = per_axis or {1: 401, 2: 81, 3: 25}.get(n, 11)
    base = _ball_samples(n, 1.0, per_axis)

    def feasible(r):
        pts = F.valid_center + r * base
        if np.min(np.abs(np.linalg.det(F.jacobian(pts)))) < floor:
            return False
        return not cKDTree(F(pts)).query_pairs(1e-12)

    if feasible(R):
        return float(R)
    lo, hi = 0.0, float(R)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
    return lo


def build_flattening_map(L1: EllipticOperator, R: float, det_floor: Optional[float] = None,
                         n_check: int = 200) -> FlatteningResult:
    """Shear ``F(x) = (x' + g(x') x_n, x_n)`` with ``g_i = -a_in(x', 0) / a_nn(x', 0)``.

    Exact derivatives are used when the coefficients are expressions; the
    resulting map is restricted to the radius found by :func:`jacobian_radius`.
    """
    n = L1.dim
    if not R > 0:
        raise ParameterError("R must be positive")
    rng = np.random.default_rng(0)
    xb = np.zeros((n_check, n))
    xb[:, :-1] = rng.uniform(-R, R, (n_check, n - 1))
    ann = L1.a[-1][-1](xb)
    if np.any(ann <= 0):
        bad = xb[ann <= 0][0]
        raise EllipticityError(f"a_nn <= 0 at boundary point {bad.tolist()}")
    if n == 1:
        F = Diffeomorphism.identity(1)
        return FlatteningResult(F, float(R), [])
    xs = _expr.symbols(n)
    if L1.is_symbolic():
        on_bdry = {xs[-1]: 0}
        shear = [sp.simplify(-L1.a[i][-1].expr.subs(on_bdry) / L1.a[-1][-1].expr.subs(on_bdry)) for i in range(n - 1)]
        comps = [xs[i] + shear[i] * xs[-1] for i in range(n - 1)] + [xs[-1]]
        F = Diffeomorphism.from_exprs(comps, n, regularity=L1.coeff_regularity)
        shear_fields = [ScalarField(_expr.lambdify(s, n), n, expr=s) for s in shear]
    else:
        def gfun(p):
            q = np.array(p, dtype=float, copy=True)
            q[..., -1] = 0.0
            return np.stack([-L1.a[i][-1](q) / L1.a[-1][-1](q) for i in range(n - 1)], axis=-1)

        def forward(p):
            out = np.array(p, dtype=float, copy=True)
            out[..., :-1] += gfun(p) * p[..., -1:]
            return out

        F = Diffeomorphism(forward, n, regularity=L1.coeff_regularity)
        shear_fields = [ScalarField(lambda p, i=i: gfun(p)[..., i], n) for i in range(n - 1)]
    R_prime = jacobian_radius(F, R, det_floor)
    F.valid_radius = R_prime
    return FlatteningResult(F, R_prime, shear_fields)
