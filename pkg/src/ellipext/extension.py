"""Sup-norm preserving reflection extensions.

A function ``u`` with ``u = 0`` and ``Lu = 0`` on the boundary is extended
across it by ``Eu(s) = -u(F(s))`` where ``F(s) = -(s - (b/a) s^2)`` is a
squeezed reflection matched to the normal coefficients ``a = a_nn`` and
``b = b_n``.  The minus sign and the squeeze make value, first and second
derivatives continuous at the seam while ``|Eu| <= sup |u|`` pointwise.

Three levels are provided: one dimension (:func:`extend_1d`), the half
cuboid (:func:`extend_halfspace`) and bounded domains covered by a chart
atlas (:func:`extend_global`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr as _expr
from .elliptic_op import EllipticOperator
from .errors import AdmissibilityError, DomainError, ParameterError
from .fields import (
    DomainSpec,
    ScalarField,
    as_field,
    as_points,
    cutoff,
    fd_weights,
    one_sided_derivatives,
    smooth_step,
)
from .transform import Diffeomorphism, TransformedOperator, build_flattening_map, pushforward_operator

SAFETY = 0.9
TOL_1D = 1e-8
TOL_ND = 1e-6


# ---------------------------------------------------------------------------
# reflection function and depth
# ---------------------------------------------------------------------------


def reflection_function(a, b, s):
    """``F_{a,b}(s) = -(s - (b/a) s^2)``; ``F(0) = 0``, ``F'(0) = -1``, ``F''(0) = 2b/a``."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ParameterError("reflection needs a > 0")
    s = np.asarray(s, dtype=float)
    out = -(s - (np.asarray(b, dtype=float) / a) * s * s)
    return out[()] if out.ndim == 0 else out


def reflection_delta(a: float, b: float, R: float, safety: float = SAFETY) -> float:
    """Depth ``delta`` such that ``F_{a,b}`` maps ``(-delta, 0]`` into ``[0, R)``.

    ``b = 0``: ``safety R``.  ``b < 0``: ``safety min(a/|b|, R)``.  ``b > 0``:
    ``safety |s_R|`` with ``s_R`` the negative root of ``F(s) = R``.

    Examples
    --------
    >>> round(reflection_delta(1, 1, 1), 3)
    0.556
    """
    if not a > 0:
        raise ParameterError("reflection_delta needs a > 0")
    if not R > 0:
        raise ParameterError("reflection_delta needs R > 0")
    if not 0 < safety < 1:
        raise ParameterError("safety must lie in (0, 1)")
    if b == 0:
        return safety * R
    if b < 0:
        return safety * min(a / abs(b), R)
    # (b/a) s^2 - s - R = 0, negative root written without cancellation
    s_R = -2 * R / (1 + math.sqrt(1 + 4 * b * R / a))
    return safety * abs(s_R)


@dataclass(frozen=True)
class ReflectionParams:
    a: float
    b: float
    delta: float
    R: float
    safety: float = SAFETY

    @classmethod
    def build(cls, a, b, R, safety=SAFETY) -> "ReflectionParams":
        p = cls(float(a), float(b), reflection_delta(a, b, R, safety), float(R), safety)
        p.verify()
        return p

    def verify(self, m: int = 2001) -> None:
        s = -self.delta * np.linspace(0, 1, m, endpoint=False)
        img = reflection_function(self.a, self.b, s)
        if np.any(img < 0) or np.any(img >= self.R):
            raise DomainError(f"reflection with a={self.a}, b={self.b} leaves [0, R) on (-{self.delta}, 0]")


def common_delta(lam: float, Lambda: float, R: float, safety: float = SAFETY, n_check: int = 100) -> float:
    """One depth valid for all ``a >= lam`` and ``|b| <= Lambda``.

    The worst cases are ``a = lam`` with ``b = ±Lambda``; the result is
    re-verified on a grid of ``n_check`` parameter pairs.
    """
    if not lam > 0 or not (Lambda >= 0 and math.isfinite(Lambda)) or not R > 0:
        raise ParameterError("common_delta needs lam > 0, 0 <= Lambda < inf and R > 0")
    delta = min(reflection_delta(lam, Lambda, R, safety), reflection_delta(lam, -Lambda, R, safety))
    k = max(2, int(math.isqrt(n_check)))
    for a in np.linspace(lam, max(lam, Lambda, 1.0) * 4, k):
        for b in np.linspace(-Lambda, Lambda, k):
            ReflectionParams(a, b, delta, R, safety).verify(401)
    return delta


def seam_cutoff(delta: float) -> ScalarField:
    """``eta = 1`` on ``[-delta/2, inf)`` and ``0`` on ``(-inf, -3 delta/4]``."""
    return ScalarField(lambda p: smooth_step((p[..., 0] + 0.75 * delta) / (0.25 * delta)), 1)


# ---------------------------------------------------------------------------
# one dimension
# ---------------------------------------------------------------------------


@dataclass
class Extension:
    """An extended function plus the data it was built from."""

    function: ScalarField
    delta: float
    residual: float
    kind: str
    meta: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.function(x)


def _normal_jets(u: ScalarField, pts: np.ndarray, axis: int, h: float = 1e-2):
    """Value, first and second one-sided normal derivatives at ``pts``."""
    if u.expr is not None:
        xs = _expr.symbols(u.dim)
        d1 = u.derivative(axis)
        d2 = ScalarField(_expr.lambdify(d1.expr.diff(xs[axis]), u.dim), u.dim)
        return u(pts), d1(pts), d2(pts)
    d1, d2 = one_sided_derivatives(u, pts, axis, h, direction=1, points=8)
    return u(pts), d1, d2


def boundary_residual_1d(u, a: float, b: float) -> float:
    """``max(|u(0)|, |a u''(0+) + b u'(0+)|)``."""
    u = as_field(u, 1)
    v, d1, d2 = _normal_jets(u, np.zeros((1, 1)), 0)
    return float(max(abs(v[0]), abs(a * d2[0] + b * d1[0])))


def extend_1d(u, a: float, b: float, R: float, delta: Optional[float] = None, strict: bool = True,
              tol: float = TOL_1D) -> Extension:
    """``E1 u(s) = eta(s) (-u(F(s)))`` for ``s < 0`` and ``u(s)`` for ``s >= 0``.

    ``u`` lives on ``[0, R)`` (values beyond its support are 0).  With
    ``strict`` the boundary conditions ``u(0) = 0`` and
    ``a u''(0) + b u'(0) = 0`` are enforced to ``tol``.
    """
    u = as_field(u, 1)
    params = ReflectionParams.build(a, b, R) if delta is None else ReflectionParams(float(a), float(b), delta, float(R))
    if delta is not None:
        params.verify()
    res = boundary_residual_1d(u, a, b)
    if strict and res > tol:
        raise AdmissibilityError(f"u violates the boundary conditions (residual {res:.3e} > {tol:g})", residual=res)
    eta = seam_cutoff(params.delta)
    d = params.delta

    def evaluate(p):
        s = p[..., 0]
        out = np.zeros(s.shape)
        pos = s >= 0
        if np.any(pos):
            out[pos] = u(s[pos])
        neg = (s < 0) & (s > -d)
        if np.any(neg):
            out[neg] = -eta(s[neg]) * u(reflection_function(a, b, s[neg]))
        return out

    return Extension(ScalarField(evaluate, 1), d, res, "1d", {"a": a, "b": b, "R": R})


# ---------------------------------------------------------------------------
# half cuboid
# ---------------------------------------------------------------------------


def _boundary_points(dim: int, R: float, m: int, rng) -> np.ndarray:
    pts = np.zeros((m, dim))
    pts[:, :-1] = rng.uniform(-R, R, (m, dim - 1))
    return pts


def boundary_operator_residual(L: EllipticOperator, u: ScalarField, pts: np.ndarray) -> np.ndarray:
    """``|Lu|`` at points of ``x_n = 0`` using only the ``x_n >= 0`` side."""
    if u.expr is not None and L.is_symbolic():
        return np.abs(L.apply_field(u)(pts))
    n = L.dim
    A, B, C = L.coefficients(pts)
    v, d1, d2 = _normal_jets(u, pts, n - 1)
    total = A[:, -1, -1] * d2 + B[:, -1] * d1 + C * v
    h = 1e-3
    for i in range(n - 1):
        e = np.zeros(n)
        e[i] = h
        up = _normal_jets(u, pts + e, n - 1)[1]
        dn = _normal_jets(u, pts - e, n - 1)[1]
        total += 2 * A[:, i, -1] * (up - dn) / (2 * h)
        total += B[:, i] * (u(pts + e) - u(pts - e)) / (2 * h)
        for j in range(n - 1):
            f = np.zeros(n)
            f[j] = h
            dij = (u(pts + e + f) - u(pts + e - f) - u(pts - e + f) + u(pts - e - f)) / (4 * h * h)
            total += A[:, i, j] * dij
    return np.abs(total)


def extend_halfspace(u, L: EllipticOperator, R: float, delta: Optional[float] = None, strict: bool = True,
                     tol: float = TOL_ND, n_check: int = 200, operator_residual: Optional[Callable] = None,
                     boundary_samples=None, seed: int = 0) -> Extension:
    """Reflect ``u`` from ``x_n >= 0`` to ``x_n < 0``.

    ``(Eu)(x) = -eta(x_n) u(x', F(x_n))`` with ``F`` built from
    ``a_nn(x', 0)`` and ``b_n(x', 0)`` and one depth ``delta`` valid for the
    sampled coefficient ranges.  ``L`` must have no mixed terms ``a_in`` on
    ``x_n = 0``; use :func:`ellipext.transform.build_flattening_map` first
    otherwise.  ``operator_residual`` may supply ``|Lu|`` on boundary points
    and ``boundary_samples`` the points of ``x_n = 0`` to check (default:
    ``n_check`` random points with ``|x'| <= R``).
    """
    u = as_field(u, L.dim)
    n = L.dim
    rng = np.random.default_rng(seed)
    if boundary_samples is None:
        bp = _boundary_points(n, R, n_check, rng)
    else:
        bp = as_points(boundary_samples, n).reshape(-1, n)
    A, B, _ = L.coefficients(bp)
    cross = float(np.max(np.abs(A[:, :-1, -1]))) if n > 1 else 0.0
    if cross > tol:
        raise AdmissibilityError(f"operator has mixed terms a_in = {cross:.3e} on x_n = 0; "
                                 "apply build_flattening_map first", residual=cross)
    vres = float(np.max(np.abs(u(bp))))
    lres = float(np.max(operator_residual(bp) if operator_residual is not None else boundary_operator_residual(L, u, bp)))
    res = max(vres, lres)
    if strict and res > tol:
        raise AdmissibilityError(f"u violates u = 0, Lu = 0 on x_n = 0 (residual {res:.3e} > {tol:g})", residual=res)
    ann = A[:, -1, -1]
    if delta is None:
        delta = common_delta(float(ann.min()), float(np.abs(B[:, -1]).max()), R)
    eta = seam_cutoff(delta)

    def evaluate(p):
        out = np.zeros(p.shape[:-1])
        t = p[..., -1]
        pos = t >= 0
        if np.any(pos):
            out[pos] = u(p[pos])
        neg = (t < 0) & (t > -delta)
        if np.any(neg):
            q = p[neg].copy()
            foot = q.copy()
            foot[:, -1] = 0.0
            Af, Bf, _ = L.coefficients(foot)
            s = q[:, -1]
            q[:, -1] = reflection_function(Af[:, -1, -1], Bf[:, -1], s)
            out[neg] = -eta(s) * u(q)
        return out

    return Extension(ScalarField(evaluate, n), float(delta), res, "halfspace",
                     {"R": R, "cross_terms": cross})


# ---------------------------------------------------------------------------
# charts, partitions and the global operator
# ---------------------------------------------------------------------------


def compose(outer: Diffeomorphism, inner: Diffeomorphism) -> Diffeomorphism:
    """``outer ∘ inner`` with chain-rule derivatives."""

    def forward(p):
        return outer(inner(p))

    def jacobian(p):
        return outer.jacobian(inner(p)) @ inner.jacobian(p)

    def second(p):
        z = inner(p)
        Ji, Hi = inner.jacobian(p), inner.second_derivs(p)
        Jo, Ho = outer.jacobian(z), outer.second_derivs(z)
        return np.einsum("...klm,...li,...mj->...kij", Ho, Ji, Ji) + np.einsum("...kl,...lij->...kij", Jo, Hi)

    inv = None
    if inner.inverse_map is not None:
        def inv(y):
            return inner.inverse_map(outer.inverse(y))

    return Diffeomorphism(forward, inner.dim, jacobian, second, inverse_map=inv, regularity=inner.regularity)


@dataclass
class Chart:
    """Boundary chart ``G: x -> y`` with ``∂Ω -> {y_n = 0}`` and ``Ω -> {y_n > 0}``.

    ``eta`` is the chart cutoff in ``x`` coordinates, ``active`` marks where
    ``G`` may be evaluated (a superset of ``supp eta``) and ``R`` is the
    normal depth available for reflected points.
    """

    G: Diffeomorphism
    R: float
    eta: ScalarField
    active: Callable[[np.ndarray], np.ndarray]
    name: str = ""


@dataclass
class PartitionOfUnity:
    """Weights ``Phi_i = eta_i / M(sum eta_j)`` with a smooth ``M >= max(s, 1)``-like normaliser.

    ``M(s) = s + 1 - S(s)`` with the smooth step ``S``: for ``s >= 1`` the
    weights sum to exactly one, and ``sum Phi <= 1`` everywhere.
    """

    etas: list

    def weights(self, x) -> np.ndarray:
        raw = np.stack([np.broadcast_to(e(x), np.shape(x)[:-1]) for e in self.etas], axis=-1)
        total = raw.sum(axis=-1)
        M = total + 1.0 - smooth_step(total)
        return raw / M[..., None]

    def __len__(self):
        return len(self.etas)


def build_partition(cover: Sequence, omega: DomainSpec, shrink: float = 0.8, n_check: int = 1000,
                    seed: int = 0) -> PartitionOfUnity:
    """Partition of unity on ``omega`` subordinate to ``cover``.

    Items of ``cover`` are balls/boxes (a cutoff is built for the set shrunk
    by ``shrink``) or ready-made cutoff fields.  Raises with the first point
    of ``omega`` where the cutoffs do not reach one.
    """
    etas = []
    for item in cover:
        if isinstance(item, DomainSpec):
            if item.kind == "ball":
                inner = DomainSpec.ball(item.center, shrink * item.radius)
            else:
                mid, half = (item.lower + item.upper) / 2, (item.upper - item.lower) / 2
                inner = DomainSpec.box(mid - shrink * half, mid + shrink * half)
            etas.append(cutoff(inner, item))
        else:
            etas.append(item)
    rng = np.random.default_rng(seed)
    pts = np.concatenate([omega.sample_interior(n_check, rng), omega.sample_boundary(n_check // 4, rng)])
    total = np.sum([np.broadcast_to(e(pts), pts.shape[:-1]) for e in etas], axis=0)
    if np.any(total < 1 - 1e-12):
        bad = pts[total < 1 - 1e-12][0]
        raise DomainError(f"cover does not reach the closure of the domain at {bad.tolist()}")
    return PartitionOfUnity(etas)


def extend_global(u, L: EllipticOperator, charts: Sequence[Chart], partition: PartitionOfUnity,
                  omega: DomainSpec, strict: bool = True, tol: float = TOL_ND, n_check: int = 200,
                  seed: int = 0) -> Extension:
    """``Eu = Phi_0 u + sum_i Phi_i (E_i (u ∘ G_i^{-1})) ∘ G_i``.

    ``partition.etas[0]`` is the interior cutoff and ``partition.etas[i]``
    belongs to ``charts[i-1]``.  Each chart extension is a half-space
    extension for the transformed operator; the boundary conditions are
    checked per chart and failures are listed together.
    """
    u = as_field(u, L.dim)
    if len(partition) != len(charts) + 1:
        raise ParameterError("partition needs one interior weight plus one per chart")
    Lu = L.apply_field(u)
    rng = np.random.default_rng(seed)
    chart_ext, failures, residuals = [], [], []
    for k, ch in enumerate(charts):
        Li = pushforward_operator(L, ch.G, sample_points=_chart_samples(ch, omega, rng))
        G = ch.G

        def v(y, G=G):
            return u(G.inverse(y))

        def op_res(y, G=G):
            return np.abs(Lu(G.inverse(y)))

        vfield = ScalarField(v, L.dim)
        bnd = omega.boundary_points if omega.boundary_points is not None else omega.sample_boundary(n_check, rng)
        bnd = bnd[ch.active(bnd)]
        bnd = bnd[ch.eta(bnd) > 0]
        ybnd = G(bnd)[:: max(1, len(bnd) // n_check)]
        ybnd[:, -1] = 0.0
        try:
            E = extend_halfspace(vfield, Li, ch.R, strict=strict, tol=tol, operator_residual=op_res,
                                 boundary_samples=ybnd, seed=seed + k)
        except AdmissibilityError as exc:
            failures.append(f"chart {ch.name or k}: {exc}")
            continue
        chart_ext.append((ch, E))
        residuals.append(E.residual)
    if failures:
        raise AdmissibilityError("; ".join(failures), residual=None)

    def evaluate(p):
        flat = p.reshape(-1, L.dim)
        W = partition.weights(flat)
        out = np.zeros(len(flat))
        inside = omega.contains(flat, closed=True)
        sel = inside & (W[:, 0] > 0)
        if np.any(sel):
            out[sel] += W[sel, 0] * u(flat[sel])
        for i, (ch, E) in enumerate(chart_ext, start=1):
            sel = W[:, i] > 0
            if np.any(sel):
                sel &= ch.active(flat)
                out[sel] += W[sel, i] * E(ch.G(flat[sel]))
        return out.reshape(p.shape[:-1])

    res = float(max(residuals, default=0.0))
    return Extension(ScalarField(evaluate, L.dim), min(E.delta for _, E in chart_ext), res, "global",
                     {"chart_deltas": [E.delta for _, E in chart_ext]})


def _chart_samples(ch: Chart, omega: DomainSpec, rng) -> np.ndarray:
    lo, hi = omega.bounding_box()
    span = hi - lo
    pts = lo - 0.25 * span + 1.5 * span * rng.random((4000, omega.dim))
    pts = pts[ch.active(pts) & (ch.eta(pts) > 0)]
    return pts[:400] if len(pts) else np.zeros((1, omega.dim))


def disk_atlas(center=(0.0, 0.0), rho: float = 1.0, n_charts: int = 8, depth: float = 0.5,
               half_angle: float = 0.6, plateau_angle: float = 0.42, inner_plateau: float = 0.72,
               inner_support: float = 0.8, n_boundary: int = 2000):
    """Atlas for a disk: ``DomainSpec``, boundary charts and partition cutoffs.

    Chart ``i`` is ``y = (rho phi, rho - |x - c|)`` with ``phi`` the angle
    measured from ``theta_i = 2 pi i / n_charts``; it has an analytic inverse.
    Angular cutoffs are 1 on ``|phi| <= plateau_angle`` and vanish beyond
    ``half_angle``; radially they cover ``r >= inner_plateau rho`` inside and
    ``r <= 1.3 rho`` outside.  The interior cutoff is 1 on
    ``r <= inner_plateau rho`` and vanishes at ``r = inner_support rho``.
    """
    c = np.asarray(center, dtype=float)
    theta_b = np.linspace(0, 2 * np.pi, n_boundary, endpoint=False)
    bpts = c + rho * np.stack([np.cos(theta_b), np.sin(theta_b)], axis=1)
    omega = DomainSpec.chart_atlas(lambda p: np.linalg.norm(p - c, axis=-1) < rho, bpts, c - rho, c + rho,
                                   boundary_order=math.inf)
    if plateau_angle * n_charts < math.pi:
        raise ParameterError("chart plateaus do not cover the circle")
    charts = []
    r_in_plateau = rho * (1 - inner_plateau)  # y_n where the inside plateau ends
    r_in_zero = rho * (1 - inner_plateau) + 0.1 * rho
    for i in range(n_charts):
        th = 2 * math.pi * i / n_charts
        cs, sn = math.cos(th), math.sin(th)

        def fwd(p, cs=cs, sn=sn):
            d = p - c
            xr = cs * d[..., 0] + sn * d[..., 1]
            yr = -sn * d[..., 0] + cs * d[..., 1]
            r = np.hypot(xr, yr)
            return np.stack([rho * np.arctan2(yr, xr), rho - r], axis=-1)

        def jac(p, cs=cs, sn=sn):
            d = p - c
            r2 = np.sum(d * d, axis=-1)
            r = np.sqrt(r2)
            J = np.empty(p.shape[:-1] + (2, 2))
            J[..., 0, 0] = -rho * d[..., 1] / r2
            J[..., 0, 1] = rho * d[..., 0] / r2
            J[..., 1, 0] = -d[..., 0] / r
            J[..., 1, 1] = -d[..., 1] / r
            return J

        def hess(p):
            d = p - c
            x, y = d[..., 0], d[..., 1]
            r2 = x * x + y * y
            r3 = r2 ** 1.5
            H = np.empty(p.shape[:-1] + (2, 2, 2))
            H[..., 0, 0, 0] = rho * 2 * x * y / r2**2
            H[..., 0, 1, 1] = -rho * 2 * x * y / r2**2
            H[..., 0, 0, 1] = H[..., 0, 1, 0] = rho * (y * y - x * x) / r2**2
            H[..., 1, 0, 0] = -y * y / r3
            H[..., 1, 1, 1] = -x * x / r3
            H[..., 1, 0, 1] = H[..., 1, 1, 0] = x * y / r3
            return H

        def inv(y, th=th):
            ang = th + y[..., 0] / rho
            r = rho - y[..., 1]
            return np.stack([c[0] + r * np.cos(ang), c[1] + r * np.sin(ang)], axis=-1)

        G = Diffeomorphism(fwd, 2, jac, hess, inverse_map=inv, regularity="C-infinity")

        def eta(p, G=G):
            y = G(p)
            ang = np.abs(y[..., 0]) / rho
            e1 = 1 - smooth_step((ang - plateau_angle) / (half_angle - plateau_angle))
            t = y[..., 1]
            e_in = 1 - smooth_step((t - r_in_plateau) / (r_in_zero - r_in_plateau))
            e_out = 1 - smooth_step((-t - 0.1 * rho) / (0.2 * rho))
            return e1 * e_in * e_out

        def active(p):
            return np.linalg.norm(p - c, axis=-1) > 0.05 * rho

        charts.append(Chart(G, depth * rho, ScalarField(eta, 2), active, name=f"theta={th:.4f}"))

    def eta0(p):
        r = np.linalg.norm(p - c, axis=-1) / rho
        return 1 - smooth_step((r - inner_plateau) / (inner_support - inner_plateau))

    return omega, charts, [ScalarField(eta0, 2)] + [ch.eta for ch in charts]


# ---------------------------------------------------------------------------
# seam diagnostics
# ---------------------------------------------------------------------------


@dataclass
class Seam:
    """Seam points with unit normals pointing to the side the data came from."""

    points: np.ndarray
    normals: np.ndarray

    @classmethod
    def point_1d(cls, s0: float = 0.0) -> "Seam":
        return cls(np.array([[s0]]), np.array([[1.0]]))

    @classmethod
    def flat(cls, tangential, dim: int) -> "Seam":
        t = np.asarray(tangential, dtype=float).reshape(-1, dim - 1)
        pts = np.concatenate([t, np.zeros((len(t), 1))], axis=1)
        nrm = np.zeros_like(pts)
        nrm[:, -1] = 1.0
        return cls(pts, nrm)

    @classmethod
    def circle(cls, center, rho: float, angles) -> "Seam":
        ang = np.asarray(angles, dtype=float)
        u = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return cls(np.asarray(center, dtype=float) + rho * u, -u)


@dataclass
class SmoothnessReport:
    value_mismatch: float
    first_mismatch: float
    second_mismatch: float
    mixed_mismatch: float
    holder_second: float
    h: float
    per_point_second: np.ndarray = field(repr=False, default=None)


_OFFSETS = np.arange(1, 6, dtype=float)
_W = [fd_weights(_OFFSETS, k) for k in range(3)]


def _one_sided_jet(f, p, nrm, h):
    """Limits of value, first and second normal derivative from both sides."""
    t = np.concatenate([_OFFSETS, -_OFFSETS]) * h
    pts = p[:, None, :] + t[None, :, None] * nrm[:, None, :]
    vals = np.asarray(f(pts), dtype=float)
    plus, minus = vals[:, :5], vals[:, 5:]
    jp = [plus @ _W[k] / h**k for k in range(3)]
    jm = [minus @ _W[k] / (-h) ** k for k in range(3)]
    return jp, jm


def verify_extension_smoothness(Eu, seam: Seam, alpha: Optional[float] = None, h: float = 1e-4) -> SmoothnessReport:
    """Compare one-sided limits across a seam.

    Values, first and second normal derivatives are extrapolated to the
    seam from each side with five-point one-sided stencils that never touch
    the seam itself.  In two or more dimensions the mixed tangential-normal
    derivative is compared too.  ``holder_second`` is the sampled
    ``alpha``-Hölder seminorm of the normal second derivative on a short
    segment through each seam point.
    """
    f = Eu if callable(Eu) else as_field(Eu, seam.points.shape[1])
    p, nrm = seam.points, seam.normals
    jp, jm = _one_sided_jet(f, p, nrm, h)
    mism = [np.abs(jp[k] - jm[k]) for k in range(3)]
    mixed = 0.0
    n = p.shape[1]
    if n > 1:
        for ax in range(n):
            tang = np.zeros_like(p)
            tang[:, ax] = 1.0
            tang -= np.sum(tang * nrm, axis=1, keepdims=True) * nrm
            norm = np.linalg.norm(tang, axis=1, keepdims=True)
            ok = norm[:, 0] > 1e-8
            if not np.any(ok):
                continue
            tang = tang[ok] / norm[ok]
            k = 1e-3
            up_p, up_m = _one_sided_jet(f, p[ok] + k * tang, nrm[ok], h)
            dn_p, dn_m = _one_sided_jet(f, p[ok] - k * tang, nrm[ok], h)
            dp = (up_p[1] - dn_p[1]) / (2 * k)
            dm = (up_m[1] - dn_m[1]) / (2 * k)
            mixed = max(mixed, float(np.max(np.abs(dp - dm))))
    hold = 0.0
    if alpha is not None:
        step = 1e-3
        ts = np.concatenate([-np.linspace(3 * step, 0.05, 25)[::-1], np.linspace(3 * step, 0.05, 25)])
        for q, nv in zip(p[:20], nrm[:20]):
            line = q + ts[:, None] * nv
            vals = np.asarray(f(line[:, None, :] + np.array([-step, 0, step])[None, :, None] * nv), dtype=float)
            d2 = (vals[:, 0] - 2 * vals[:, 1] + vals[:, 2]) / step**2
            hold = max(hold, _quot(ts, d2, alpha))
    return SmoothnessReport(float(mism[0].max()), float(mism[1].max()), float(mism[2].max()), mixed, hold, h,
                            mism[2])


def _quot(t, v, alpha):
    dt = np.abs(t[:, None] - t[None, :])
    dv = np.abs(v[:, None] - v[None, :])
    ok = dt > 0
    return float(np.max(dv[ok] / dt[ok] ** alpha))
