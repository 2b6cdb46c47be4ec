"""Harmonic lifting, the Perron sweep and barrier-based boundary checks.

The discrete Perron iteration starts from the lower comparison function
and repeatedly replaces the current subsolution on a ball by the solution
of ``L_h v = f`` there, with the current values on the surrounding mesh
ring as boundary data.  For an M-matrix discretisation every lifting of a
subsolution is again a subsolution and lies above it, so the sweep is
monotone and bounded by the upper comparison function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from ..elliptic_op import EllipticOperator, build_barrier, build_comparison_pair
from ..errors import ConvergenceError, DomainError, MonotonicityError
from ..fields import DomainSpec, GridFunction, as_field
from .discrete import Discretization, DirectSolution, direct_solve, discrete_pair_check, require_nonpositive_c


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float


def _ball_inside(domain: DomainSpec, ball: Ball) -> bool:
    c = np.asarray(ball.center, dtype=float)
    if not domain.contains(c, closed=False):
        return False
    return float(domain.boundary_distance(c)) > ball.radius


def default_cover(disc: Discretization, radius: Optional[float] = None, stride: Optional[float] = None):
    """Overlapping balls with closures inside the domain covering every unknown.

    Balls of ``radius`` (default: a third of the inradius, at least 4h) sit
    on a lattice of spacing ``stride`` (default: ``radius``); unknowns the
    lattice misses get a small ball of their own.
    """
    dom, h = disc.domain, disc.h
    pts = disc.interior_points
    d_in = dom.boundary_distance(pts)
    inradius = float(d_in.max())
    radius = max(4 * h, inradius / 3) if radius is None else radius
    stride = radius if stride is None else stride
    lo, hi = dom.bounding_box()
    axes = [np.arange(l + stride / 2, u, stride) for l, u in zip(lo, hi)]
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.dim)
    balls = []
    for cpt in cand:
        if not dom.contains(cpt, closed=False):
            continue
        dist = float(dom.boundary_distance(cpt))
        r = min(radius, dist - 0.5 * h)
        if r >= h:
            balls.append(Ball(cpt, r))
    covered = np.zeros(len(pts), dtype=bool)
    for b in balls:
        covered |= np.linalg.norm(pts - b.center, axis=1) < b.radius
    # unknowns close to the boundary: balls through them, as large as allowed
    for k in np.argsort(d_in):
        if covered[k]:
            continue
        b = Ball(pts[k], 0.9 * float(d_in[k]))
        balls.append(b)
        covered |= np.linalg.norm(pts - b.center, axis=1) < b.radius
        covered[k] = True
    return balls


@dataclass
class PerronState:
    current: GridFunction
    ball_cover: list
    sweep_count: int
    last_increment: float
    increments: list = field(default_factory=list)
    min_increment: float = 0.0


class _Lifter:
    """Prefactorised local solves ``A_SS`` for each ball."""

    def __init__(self, disc: Discretization, balls: Sequence[Ball]):
        self.disc = disc
        pts = disc.interior_points
        self.sets, self.rows, self.lus = [], [], []
        A = disc.A.tocsr()
        for b in balls:
            if not _ball_inside(disc.domain, b):
                raise DomainError(f"ball at {np.asarray(b.center).tolist()} with radius {b.radius} leaves the domain")
            S = np.flatnonzero(np.linalg.norm(pts - b.center, axis=1) < b.radius)
            if len(S) == 0:
                continue
            self.sets.append(S)
            self.rows.append(A[S])
            self.lus.append(spla.splu(A[S][:, S].tocsc()))
        covered = np.zeros(len(pts), dtype=bool)
        for S in self.sets:
            covered[S] = True
        if not np.all(covered):
            raise DomainError(f"cover misses the mesh node {pts[~covered][0].tolist()}")

    def lift(self, k: int, u: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Increment on ball ``k`` making ``L_h u = f`` there (``rhs = f - B g``)."""
        S = self.sets[k]
        return self.lus[k].solve(rhs[S] - self.rows[k] @ u)


def harmonic_lift(L: EllipticOperator, f, u: GridFunction, ball: Ball, g=None, domain: Optional[DomainSpec] = None,
                  disc: Optional[Discretization] = None) -> GridFunction:
    """Replace ``u`` inside ``ball`` by the discrete solution of ``L_h v = f``.

    Boundary data are the values of ``u`` on the mesh nodes around the ball
    (and ``g``, defaulting to ``u``'s interpolant, at boundary points of the
    domain that are not mesh nodes).  Outside the ball ``u`` is unchanged.
    """
    if disc is None:
        if domain is None:
            raise DomainError("harmonic_lift needs the domain or a discretisation")
        disc = Discretization(L, domain, u.h)
    ball = Ball(np.atleast_1d(np.asarray(ball.center, dtype=float)), float(ball.radius))
    if not _ball_inside(disc.domain, ball):
        raise DomainError("the closed ball is not inside the domain")
    u_int = disc.from_grid(u)
    bvals = _boundary_values(disc, u, g)
    rhs = disc.sample_interior(f) - disc.B @ bvals
    S = np.flatnonzero(np.linalg.norm(disc.interior_points - ball.center, axis=1) < ball.radius)
    if len(S):
        A = disc.A.tocsr()
        delta = spla.splu(A[S][:, S].tocsc()).solve(rhs[S] - A[S] @ u_int)
        u_int = u_int.copy()
        u_int[S] += delta
    vals = np.array(u.values)
    vals[disc.interior_mask] = u_int
    return u.with_values(vals)


def _boundary_values(disc: Discretization, u: GridFunction, g) -> np.ndarray:
    out = np.empty(len(disc.boundary_points))
    gf = as_field(g, disc.dim) if g is not None else None
    for k, node in enumerate(disc._bnode):
        if node is not None:
            out[k] = u.values[node]
        elif gf is not None:
            out[k] = float(gf(disc.boundary_points[k]))
        else:
            out[k] = float(u.interpolant()(disc.boundary_points[k]))
    return out


@dataclass
class PerronResult:
    u: GridFunction
    state: PerronState
    v_plus: np.ndarray
    v_minus: np.ndarray
    disc: Discretization


def perron_solve(L: EllipticOperator, f, g, domain: DomainSpec, h: float, cover: Optional[Sequence[Ball]] = None,
                 max_sweeps: int = 2000, tol: float = 1e-6, disc: Optional[Discretization] = None) -> PerronResult:
    """Monotone lifting sweep from the lower comparison function.

    Every increment is asserted non-negative (to -1e-9) and every iterate
    to stay below the upper comparison function.  Stops once the largest
    increment of a sweep drops below ``tol``.
    """
    disc = Discretization(L, domain, h) if disc is None else disc
    require_nonpositive_c(disc)
    f_int = disc.sample_interior(f)
    g_bnd = disc.sample_boundary(g)
    pair = build_comparison_pair(L, f, g, domain, h=max(h, domain.diameter() / 100),
                                 discrete_check=discrete_pair_check(disc, f_int, g_bnd),
                                 boundary_points=disc.boundary_points)
    v_plus = disc.sample_interior(pair.v_plus)
    u = np.array(disc.sample_interior(pair.v_minus), dtype=float)
    balls = default_cover(disc) if cover is None else list(cover)
    lifter = _Lifter(disc, balls)
    rhs = f_int - disc.B @ g_bnd
    state = PerronState(disc.to_grid(u, g_bnd), balls, 0, math.inf)
    for sweep in range(1, max_sweeps + 1):
        before = u.copy()
        for k in range(len(lifter.sets)):
            delta = lifter.lift(k, u, rhs)
            dmin = float(delta.min())
            state.min_increment = min(state.min_increment, dmin)
            if dmin < -1e-9:
                raise MonotonicityError(f"lifting decreased the subsolution by {-dmin:.3e} in sweep {sweep}")
            S = lifter.sets[k]
            u[S] = np.maximum(u[S], u[S] + delta)
        if np.any(u > v_plus + 1e-9):
            raise MonotonicityError("iterate exceeded the upper comparison function")
        inc = float(np.max(u - before))
        state.increments.append(inc)
        state.sweep_count = sweep
        state.last_increment = inc
        if inc < tol:
            break
    else:
        raise ConvergenceError(f"Perron sweep did not reach tol {tol:g} in {max_sweeps} sweeps",
                               residual=state.last_increment)
    state.current = disc.to_grid(u, g_bnd)
    return PerronResult(state.current, state, v_plus, disc.sample_interior(pair.v_minus), disc)


# ---------------------------------------------------------------------------
# boundary attainment
# ---------------------------------------------------------------------------


def external_sphere(domain: DomainSpec, x0, R: float = 1.0):
    """Centre of an exterior ball of radius ``R`` touching ``domain`` at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    if domain.kind == "ball":
        nrm = (x0 - domain.center) / np.linalg.norm(x0 - domain.center)
    elif domain.kind in ("box", "half_cuboid"):
        on_lo = np.isclose(x0, domain.lower, atol=1e-12)
        on_hi = np.isclose(x0, domain.upper, atol=1e-12)
        faces = np.count_nonzero(on_lo) + np.count_nonzero(on_hi)
        if faces == 0:
            raise DomainError(f"{x0.tolist()} is not on the boundary")
        nrm = on_hi.astype(float) - on_lo.astype(float)
        nrm /= np.linalg.norm(nrm)
    else:
        raise DomainError("external spheres are provided for boxes and balls")
    return x0 + R * nrm


@dataclass
class BoundaryReport:
    ok: bool
    points: list
    worst_violation: float
    modulus: dict
    skipped: list
    max_Lw: float
    w_at_x0: float


def boundary_attainment_check(sol: DirectSolution, g, L: EllipticOperator, f, boundary_samples,
                              epsilons=(0.1, 0.01), R: float = 1.0, tol: float = 1e-6, u_override=None) -> BoundaryReport:
    """Check ``w_eps^- <= u <= w_eps^+`` on the mesh for barriers at each sample.

    The nets are scaled so that the discrete inequalities hold as well
    (``L_h w+ <= f``, ``w+ >= g`` on every discrete boundary point), so for
    a discrete solution the sandwich is a consequence of the discrete
    comparison principle.  ``u_override`` replaces the interior values (for
    negative controls).
    """
    disc = sol.disc
    u_int = sol.u_int if u_override is None else np.asarray(u_override)
    f_int = disc.sample_interior(f)
    g_bnd = disc.sample_boundary(g)
    worst, skipped, pts, modulus = 0.0, [], [], {}
    max_Lw, w0 = -math.inf, 0.0

    def check(wp, wm):
        return bool(np.all(disc.apply_field(wp) <= f_int + 1e-9) and np.all(disc.apply_field(wm) >= f_int - 1e-9)
                    and np.all(disc.sample_boundary(wp) >= g_bnd - 1e-12)
                    and np.all(disc.sample_boundary(wm) <= g_bnd + 1e-12))

    for x0 in np.asarray(boundary_samples, dtype=float).reshape(-1, disc.dim):
        try:
            y = external_sphere(disc.domain, x0, R)
            net = build_barrier(L, f, g, x0, y, R, epsilons, domain=disc.domain,
                                h=max(disc.h, disc.domain.diameter() / 100), boundary_points=disc.boundary_points,
                                discrete_check=check)
        except DomainError as exc:
            skipped.append((x0.tolist(), str(exc)))
            continue
        pts.append(x0.tolist())
        max_Lw = max(max_Lw, net.max_Lw)
        w0 = max(w0, abs(float(net.w(x0))))
        near = np.linalg.norm(disc.interior_points - x0, axis=1) <= 2.5 * disc.h
        for eps, (wp, wm) in net.nets.items():
            over = u_int - disc.sample_interior(wp)
            under = disc.sample_interior(wm) - u_int
            worst = max(worst, float(over.max()), float(under.max()))
            wn = float(np.max(net.w(disc.interior_points[near]), initial=0.0))
            modulus[(tuple(x0.tolist()), eps)] = eps + net.k[eps] * wn
    return BoundaryReport(worst <= tol, pts, worst, modulus, skipped, max_Lw, w0)
