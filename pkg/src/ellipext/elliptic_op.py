"""Second-order operators ``Lu = a:D²u + b·Du + c u`` and the explicit
comparison functions used by the maximum-principle machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp

from . import expr as _expr
from .errors import DomainError, EllipticityError, ParameterError
from .fields import (
    DomainSpec,
    GridFunction,
    ScalarField,
    as_field,
    as_points,
    fd_derivatives,
    holder_seminorm,
)


def _coeff(obj, dim):
    if isinstance(obj, np.ndarray) and obj.ndim == 0:
        obj = float(obj)
    return as_field(obj, dim)


class EllipticOperator:
    """Coefficient fields ``a`` (n x n), ``b`` (n) and ``c``.

    ``a`` is symmetrised on construction since only its quadratic form
    acts on Hessians.  ``lam`` and ``Lambda`` are the ellipticity and bound
    constants; for constant coefficients they are computed when omitted.

    Examples
    --------
    >>> L = EllipticOperator([[2, 1], [1, 3]])
    >>> round(L.lam, 4)
    1.382
    """

    def __init__(self, a, b=None, c=None, lam: Optional[float] = None, Lambda: Optional[float] = None,
                 coeff_regularity: str = "C0,alpha", alpha: float = 1.0):
        a_rows = [list(r) for r in (a.tolist() if isinstance(a, np.ndarray) else a)]
        n = len(a_rows)
        if n == 0 or any(len(r) != n for r in a_rows):
            raise ParameterError("a must be a square n x n array of coefficients")
        self.dim = n
        raw = [[_coeff(a_rows[i][j], n) for j in range(n)] for i in range(n)]
        self.a = [[raw[i][j] if i == j else 0.5 * (raw[i][j] + raw[j][i]) for j in range(n)] for i in range(n)]
        b = [0.0] * n if b is None else list(b.tolist() if isinstance(b, np.ndarray) else b)
        if len(b) != n:
            raise ParameterError(f"b must have {n} entries")
        self.b = [_coeff(v, n) for v in b]
        self.c = _coeff(0.0 if c is None else c, n)
        self.coeff_regularity = coeff_regularity
        self.alpha = alpha
        if lam is None or Lambda is None:
            if not self.is_constant():
                raise ParameterError("lambda and Lambda are required for variable coefficients")
            A, B, C = self.coefficients(np.zeros(n))
            lam = float(np.linalg.eigvalsh(A)[0]) if lam is None else lam
            Lambda = float(max(np.abs(A).max(), np.abs(B).max(initial=0.0), abs(C))) if Lambda is None else Lambda
        if not lam > 0:
            raise EllipticityError(f"ellipticity constant must be positive, got {lam}")
        if not (Lambda >= 0 and math.isfinite(Lambda)):
            raise ParameterError(f"coefficient bound must be finite and non-negative, got {Lambda}")
        self.lam = float(lam)
        self.Lambda = float(Lambda)

    # coefficient access ---------------------------------------------------

    def fields(self):
        return [f for row in self.a for f in row] + self.b + [self.c]

    def is_constant(self) -> bool:
        return all(f.expr is not None and not f.expr.free_symbols for f in self.fields())

    def is_symbolic(self) -> bool:
        return all(f.expr is not None for f in self.fields())

    def coefficients(self, x):
        """``(A, B, C)`` evaluated at points of shape ``(..., n)``."""
        pts = as_points(x, self.dim)
        n = self.dim
        A = np.empty(pts.shape[:-1] + (n, n))
        for i in range(n):
            for j in range(n):
                A[..., i, j] = self.a[i][j](pts)
        B = np.stack([np.broadcast_to(bi(pts), pts.shape[:-1]) for bi in self.b], axis=-1)
        C = np.broadcast_to(self.c(pts), pts.shape[:-1]).astype(float)
        return A, B, C

    def shifted(self, mu: float) -> "EllipticOperator":
        """The operator ``L - mu``."""
        return EllipticOperator([[f for f in row] for row in self.a], list(self.b), self.c - mu, self.lam,
                                max(self.Lambda, self.Lambda + abs(mu)), self.coeff_regularity, self.alpha)

    def with_constants(self, lam: float, Lambda: float) -> "EllipticOperator":
        return EllipticOperator([[f for f in row] for row in self.a], list(self.b), self.c, lam, Lambda,
                                self.coeff_regularity, self.alpha)

    def omega(self, domain: DomainSpec, h: Optional[float] = None) -> float:
        """``sup c`` over the mesh plus a Hölder-modulus safety term ``[c]_alpha h^alpha``."""
        if self.c.expr is not None and not self.c.expr.free_symbols:
            return float(self.c.expr)
        h = domain.diameter() / 100 if h is None else h
        pts, inside, step = domain.mesh_points(h)
        sup_c = float(np.max(self.c(pts[inside])))
        return sup_c + holder_seminorm(self.c, self.alpha, domain, h=max(h, domain.diameter() / 60)) * step**self.alpha

    # application ------------------------------------------------------------

    def apply(self, u, x, h: float = 1e-4, one_sided_axis: Optional[int] = None, direction: int = 1,
              domain: Optional[DomainSpec] = None) -> float:
        """``(Lu)(x)`` by finite differences (O(h²) in the interior)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if isinstance(u, GridFunction):
            return self._apply_node(u, u.index_of(x))
        d = fd_derivatives(u, x, h, order=2, one_sided_axis=one_sided_axis, direction=direction, domain=domain)
        A, B, C = self.coefficients(x)
        return float(np.sum(A * d.hessian) + B @ d.gradient + C * float(as_field(u, self.dim)(x)))

    def _apply_node(self, u: GridFunction, idx) -> float:
        """Discrete ``L_h u`` at a mesh node with central differences."""
        v, h, n = u.values, u.h, u.dim
        if any(i == 0 or i == s - 1 for i, s in zip(idx, u.shape)):
            raise DomainError(f"node {idx} has no full stencil")
        idx = np.array(idx)
        e = np.eye(n, dtype=int)

        def at(off):
            return v[tuple(idx + off)]

        grad = np.array([(at(e[i]) - at(-e[i])) / (2 * h) for i in range(n)])
        hess = np.empty((n, n))
        for i in range(n):
            hess[i, i] = (at(e[i]) - 2 * at(0 * e[i]) + at(-e[i])) / h**2
            for j in range(i):
                hess[i, j] = hess[j, i] = (at(e[i] + e[j]) - at(e[i] - e[j]) - at(e[j] - e[i]) + at(-e[i] - e[j])) / (4 * h**2)
        x = u.origin + h * idx
        A, B, C = self.coefficients(x)
        return float(np.sum(A * hess) + B @ grad + C * at(0 * e[0]))

    def apply_field(self, u, h: float = 1e-4) -> ScalarField:
        """``Lu`` as a field: exact when ``u`` and the coefficients are symbolic."""
        u = as_field(u, self.dim)
        if u.expr is not None and self.is_symbolic():
            xs = _expr.symbols(self.dim)
            e = sum(self.a[i][j].expr * sp.diff(u.expr, xs[i], xs[j]) for i in range(self.dim) for j in range(self.dim))
            e = e + sum(self.b[i].expr * sp.diff(u.expr, xs[i]) for i in range(self.dim)) + self.c.expr * u.expr
            return ScalarField(_expr.lambdify(e, self.dim), self.dim, expr=e)

        def evaluate(p):
            flat = p.reshape(-1, self.dim)
            return np.array([self.apply(u, q, h) for q in flat]).reshape(p.shape[:-1])

        return ScalarField(evaluate, self.dim)


def apply(L: EllipticOperator, u, x, h: float = 1e-4, **kw) -> float:
    return L.apply(u, x, h, **kw)


# ---------------------------------------------------------------------------
# structural checks
# ---------------------------------------------------------------------------


@dataclass
class EllipticityReport:
    lambda_est: float
    ok: bool
    max_coefficient: float
    bounds_ok: bool


def _sample_domain(domain: DomainSpec, n_points: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts = domain.sample_interior(n_points, rng)
    return np.concatenate([pts, domain.sample_boundary(max(2, n_points // 4), rng)])


def verify_ellipticity(L: EllipticOperator, domain: DomainSpec, n_points: int = 200, n_directions: int = 64,
                       seed: int = 0) -> EllipticityReport:
    """Sampled ``min xi^T a xi / |xi|^2`` and the coefficient bound check.

    The direction set holds random unit vectors and, at each point, the
    eigenvectors of ``a``, so the minimum over directions is attained.
    """
    if n_points < 1 or n_directions < 1:
        raise ParameterError("n_points and n_directions must be at least 1")
    pts = _sample_domain(domain, n_points, seed)
    A, B, C = L.coefficients(pts)
    rng = np.random.default_rng(seed + 1)
    xi = rng.standard_normal((n_directions, L.dim))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    quad = np.einsum("di,pij,dj->pd", xi, A, xi)
    lam_est = min(float(quad.min()), float(np.linalg.eigvalsh(A)[:, 0].min()))
    max_coeff = float(max(np.abs(A).max(), np.abs(B).max(initial=0.0), np.abs(C).max()))
    return EllipticityReport(lam_est, lam_est >= L.lam - 1e-9, max_coeff, max_coeff <= L.Lambda + 1e-9)


@dataclass
class DissipativityReport:
    x_star: np.ndarray
    margin: float
    omega: float
    u_star: float
    ok: bool


def boundary_nodes(u: GridFunction) -> np.ndarray:
    """Mask of domain nodes that lack a full neighbour set inside the domain."""
    m = u.domain_mask()
    inner = m.copy()
    for ax in range(u.dim):
        for s in (1, -1):
            shifted = np.roll(m, s, axis=ax)
            edge = [slice(None)] * u.dim
            edge[ax] = 0 if s == 1 else -1
            shifted[tuple(edge)] = False
            inner &= shifted
    return m & ~inner


def dissipativity_margin(L: EllipticOperator, u: GridFunction, domain: Optional[DomainSpec] = None,
                         tol: float = 1e-6) -> DissipativityReport:
    """Sign-corrected ``(L_h u)(x*)`` at the argmax of ``|u|``.

    For ``c <= 0`` the margin is non-positive; in general it is at most
    ``omega |u(x*)|`` with ``omega = sup c``.
    """
    bnd = boundary_nodes(u)
    vals = np.abs(u.values)
    if np.max(vals[u.domain_mask()]) == 0:
        raise ParameterError("u vanishes identically; the condition is trivial")
    if np.max(vals[bnd]) > 1e-9:
        raise DomainError(f"u must vanish on the boundary, found {np.max(vals[bnd]):.3g}")
    interior = u.domain_mask() & ~bnd
    masked = np.where(interior, vals, -1.0)
    idx = np.unravel_index(int(np.argmax(masked)), u.shape)
    sign = 1.0 if u.values[idx] > 0 else -1.0
    margin = sign * L._apply_node(u, idx)
    box = domain if domain is not None else u.box()
    omega = L.omega(box, u.h)
    ok = margin - omega * vals[idx] <= tol
    return DissipativityReport(u.origin + u.h * np.array(idx), float(margin), omega, float(vals[idx]), bool(ok))


def _require_nonpositive_c(L: EllipticOperator, pts: np.ndarray):
    cmax = float(np.max(L.c(pts)))
    if cmax > 1e-12:
        raise EllipticityError(f"c must be <= 0 (found {cmax:.3g}); shift the operator by omega first")


# ---------------------------------------------------------------------------
# comparison functions
# ---------------------------------------------------------------------------


@dataclass
class ComparisonPair:
    v_plus: ScalarField
    v_minus: ScalarField
    gamma: float
    slab_width: float
    slab_origin: float
    sup_g: float
    sup_f: float


def _check_points(domain: DomainSpec, h: Optional[float]):
    h = domain.diameter() / 100 if h is None else h
    pts, inside, _ = domain.mesh_points(h)
    return pts[inside], h


def _sup_boundary(g, domain: DomainSpec, extra=None) -> float:
    pts = domain.sample_boundary(2000, np.random.default_rng(1))
    if domain.kind in ("box", "half_cuboid"):
        corners = np.array(np.meshgrid(*zip(domain.lower, domain.upper), indexing="ij")).reshape(domain.dim, -1).T
        pts = np.concatenate([pts, corners])
    if extra is not None and len(extra):
        pts = np.concatenate([pts, np.asarray(extra, dtype=float).reshape(-1, domain.dim)])
    return float(np.max(np.abs(as_field(g, domain.dim)(pts))))


def build_comparison_pair(L: EllipticOperator, f, g, domain: DomainSpec, h: Optional[float] = None,
                          discrete_check: Optional[Callable] = None, boundary_points=None,
                          lam: Optional[float] = None, Lambda: Optional[float] = None,
                          max_rungs: int = 60) -> ComparisonPair:
    """``v± = ±(sup|g| + (e^{gd} - e^{g t}) ||f|| / lambda)`` with ``t = x1 - x1_min``.

    ``gamma`` runs through ``Lambda/lambda + 1, + 2, ...`` until the sampled
    inequality ``L v+ <= -||f||`` holds on the mesh (tolerance 1e-6).  When
    ``discrete_check`` is given it must accept ``v+`` and return True once
    the discrete analogue holds too.
    """
    lam = L.lam if lam is None else lam
    Lambda = L.Lambda if Lambda is None else Lambda
    pts, h = _check_points(domain, h)
    _require_nonpositive_c(L, pts)
    lo, hi = domain.bounding_box()
    x0, d = float(lo[0]), float(hi[0] - lo[0])
    f = as_field(f, domain.dim)
    F = float(np.max(np.abs(f(pts))))
    G = _sup_boundary(g, domain, boundary_points)
    A, B, C = L.coefficients(pts)
    t = pts[..., 0] - x0
    fvals = f(pts)
    x1 = _expr.symbols(domain.dim)[0]
    for k in range(1, max_rungs + 1):
        gamma = Lambda / lam + k
        e = np.exp(gamma * t)
        v = G + (math.exp(gamma * d) - e) * F / lam
        Lv = -(A[:, 0, 0] * gamma**2 + B[:, 0] * gamma) * e * F / lam + C * v
        if np.all(Lv <= -F + 1e-6) and np.all(Lv <= fvals + 1e-6):
            expr = sp.Float(G) + (sp.exp(sp.Float(gamma * d)) - sp.exp(sp.Float(gamma) * (x1 - sp.Float(x0)))) * sp.Float(F / lam)
            vp = ScalarField(_expr.lambdify(expr, domain.dim), domain.dim, expr=expr)
            if discrete_check is None or discrete_check(vp):
                return ComparisonPair(vp, -vp, gamma, d, x0, G, F)
    raise EllipticityError(f"no gamma up to Lambda/lambda + {max_rungs} satisfies L v+ <= -||f||")


def interior_sup_bound(L: EllipticOperator, f, g, domain: DomainSpec, h: Optional[float] = None,
                       lam: Optional[float] = None, Lambda: Optional[float] = None) -> float:
    """``sup|g| + (e^{gamma d} - 1) ||f|| / lambda`` with the comparison pair's gamma."""
    lam = L.lam if lam is None else lam
    pair = build_comparison_pair(L, f, g, domain, h, lam=lam, Lambda=Lambda)
    return pair.sup_g + math.expm1(pair.gamma * pair.slab_width) * pair.sup_f / lam


# ---------------------------------------------------------------------------
# barriers
# ---------------------------------------------------------------------------


@dataclass
class BarrierNet:
    x0: np.ndarray
    center: np.ndarray
    R: float
    sigma: float
    tau: float
    w: ScalarField
    nets: dict = field(default_factory=dict)  # epsilon -> (w_plus, w_minus)
    k: dict = field(default_factory=dict)  # epsilon -> k'
    max_Lw: float = -math.inf

    def Lw(self, L: EllipticOperator, x) -> np.ndarray:
        return self.tau * _barrier_bracket(L, x, self.center, self.R, self.sigma)


def _barrier_bracket(L, x, y, R, sigma):
    """``L w / tau`` for ``w = tau (R^-sigma - r^-sigma)`` in closed form."""
    pts = as_points(x, L.dim)
    z = pts - y
    r2 = np.sum(z * z, axis=-1)
    A, B, C = L.coefficients(pts)
    za = np.einsum("...i,...ij,...j->...", z, A, z)
    tr = np.trace(A, axis1=-2, axis2=-1)
    bz = np.sum(B * z, axis=-1)
    r = np.sqrt(r2)
    return sigma * r ** (-sigma - 4) * (-(sigma + 2) * za + r2 * (tr + bz)) + C * (R**-sigma - r**-sigma)


def check_external_sphere(domain: DomainSpec, x0, center, R: float, extra=None, m: int = 4000):
    """Raise unless the closed ball touches the sampled closure only at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    y = np.asarray(center, dtype=float)
    if abs(np.linalg.norm(x0 - y) - R) > 1e-9 * max(1.0, R):
        raise DomainError(f"x0 is not on the sphere: |x0 - y| = {np.linalg.norm(x0 - y):.12g} != R = {R}")
    rng = np.random.default_rng(2)
    pts = [domain.sample_boundary(m, rng), domain.sample_interior(m // 4, rng)]
    if extra is not None and len(extra):
        pts.append(np.asarray(extra, dtype=float).reshape(-1, domain.dim))
    pts = np.concatenate(pts)
    far = np.linalg.norm(pts - x0, axis=1) > 1e-9
    dist = np.linalg.norm(pts[far] - y, axis=1)
    bad = dist <= R * (1 + 1e-12)
    if np.any(bad):
        raise DomainError(f"external sphere condition fails at boundary sample {pts[far][bad][0].tolist()}")


def build_barrier(L: EllipticOperator, f, g, x0, center, R: float, epsilons=(0.1, 0.01),
                  domain: Optional[DomainSpec] = None, h: Optional[float] = None, boundary_points=None,
                  discrete_check: Optional[Callable] = None) -> BarrierNet:
    """Barrier ``w = tau (R^-sigma - r^-sigma)`` at ``x0`` and the nets ``w_eps^±``.

    ``sigma`` starts at ``max(1, ceil(C1/lambda))`` and doubles until the
    sampled bracket is negative; ``tau`` then scales ``L w`` to ``<= -1``.
    ``k_eps`` is the least factor with ``w_eps^- <= g <= w_eps^+`` on the
    boundary samples (plus ``boundary_points``); the nets use
    ``k' = max(k_eps, sup|f| + Lambda |g(x0)|)``.  ``discrete_check(wp, wm)``
    may demand more; ``k'`` is doubled until it passes.
    """
    if domain is None:
        raise ParameterError("build_barrier needs the domain")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    y = np.asarray(center, dtype=float).reshape(-1)
    check_external_sphere(domain, x0, y, R, boundary_points)
    pts, h = _check_points(domain, h)
    _require_nonpositive_c(L, pts)
    A, B, _ = L.coefficients(pts)
    z = pts - y
    C1 = float(np.max(np.trace(A, axis1=-2, axis2=-1) + np.sum(B * z, axis=-1)))
    sigma = float(max(1, math.ceil(C1 / L.lam)))
    for _ in range(40):
        if np.all(_barrier_bracket(L, pts, y, R, sigma) < 0):
            break
        sigma *= 2
    else:
        raise EllipticityError("no sigma makes the barrier bracket negative")
    Lw1 = _barrier_bracket(L, pts, y, R, sigma)
    tau = 1.0 / float(np.min(np.abs(Lw1)))

    def w_eval(p):
        r = np.linalg.norm(p - y, axis=-1)
        return tau * (R**-sigma - r**-sigma)

    w = ScalarField(w_eval, L.dim)
    net = BarrierNet(x0, y, R, sigma, tau, w, max_Lw=float(np.max(tau * Lw1)))

    g = as_field(g, L.dim)
    f = as_field(f, L.dim)
    bpts = domain.sample_boundary(4000, np.random.default_rng(3))
    if boundary_points is not None and len(boundary_points):
        bpts = np.concatenate([bpts, np.asarray(boundary_points, dtype=float).reshape(-1, L.dim)])
    keep = np.linalg.norm(bpts - x0, axis=1) > 1e-12
    bpts = bpts[keep]
    wb = w(bpts)
    gb = g(bpts)
    g0 = float(g(x0))
    sup_f = float(np.max(np.abs(f(pts))))
    for eps in epsilons:
        need = np.maximum(np.abs(gb - g0) - eps, 0.0) / np.maximum(wb, 1e-300)
        k_eps = float(np.max(need, initial=0.0))
        kp = max(k_eps, sup_f + L.Lambda * abs(g0))
        for _ in range(60):
            wp = w * kp + (g0 + eps)
            wm = w * (-kp) + (g0 - eps)
            if discrete_check is None or discrete_check(wp, wm):
                break
            kp *= 2
        else:
            raise EllipticityError("barrier scaling did not satisfy the discrete check")
        net.nets[eps] = (wp, wm)
        net.k[eps] = kp
    return net


# ---------------------------------------------------------------------------
# maximum principle
# ---------------------------------------------------------------------------


@dataclass
class MaxPrincipleReport:
    kind: str
    ok: bool
    worst_violation: float
    interior_value: float
    boundary_value: float


def max_principle_check(u, L: EllipticOperator, f=0.0, domain: Optional[DomainSpec] = None,
                        kind: str = "solution", h: Optional[float] = None, tol: float = 1e-9) -> MaxPrincipleReport:
    """Compare interior extrema with boundary values.

    ``kind`` states what is known about ``u``: ``"sub"`` (``Lu >= 0``, so
    ``sup u <= sup_bdry u+``), ``"super"`` (``Lu <= 0``, so
    ``inf u >= -sup_bdry u-``) or ``"solution"`` (``Lu = 0``, so
    ``sup|u| = sup_bdry |u|``).
    """
    if kind not in ("sub", "super", "solution"):
        raise ParameterError("kind must be 'sub', 'super' or 'solution'")
    if isinstance(u, GridFunction):
        bnd = boundary_nodes(u)
        inner = u.values[u.domain_mask()]
        border = u.values[bnd]
    else:
        if domain is None:
            raise DomainError("a domain is required for field input")
        pts, h = _check_points(domain, h)
        uf = as_field(u, domain.dim)
        inner = uf(pts)
        border = uf(domain.sample_boundary(2000, np.random.default_rng(4)))
    if kind == "sub":
        iv, bv = float(inner.max()), float(np.maximum(border, 0).max())
        viol = iv - bv
    elif kind == "super":
        iv, bv = float(inner.min()), float(-np.maximum(-border, 0).max())
        viol = bv - iv
    else:
        iv, bv = float(np.abs(inner).max()), float(np.abs(border).max())
        viol = iv - bv
    return MaxPrincipleReport(kind, viol <= tol, float(max(viol, 0.0)) + 0.0, iv, bv)
