"""Function representations, sampled norms, mollification, cutoffs and
finite-difference calculus.

Points are arrays whose last axis holds the ``n`` coordinates.  In one
dimension a bare array of shape ``(m,)`` is read as ``m`` points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp
from scipy import integrate, optimize, special
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree

from . import expr as _expr
from .errors import DomainError, ParameterError, StencilError

ALL_PAIRS_LIMIT = 20_000


def as_points(x, n: int) -> np.ndarray:
    """Coerce ``x`` to an array of points with trailing axis ``n``."""
    pts = np.asarray(x, dtype=float)
    if n == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
        pts = pts[..., None]
    if pts.shape[-1] != n:
        raise DomainError(f"expected points with {n} coordinates, got shape {pts.shape}")
    return pts


# ---------------------------------------------------------------------------
# scalar fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real-valued function on (a subset of) R^n.

    ``evaluator`` receives an array of shape ``(..., n)`` and must return an
    array of shape ``(...)``.  When ``expr`` is set it is the sympy form of the
    same function and enables exact derivatives.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    dim: int
    holder_alpha: Optional[float] = None
    support_hint: Optional[tuple] = None
    expr: Optional[sp.Expr] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError("dimension must be a positive integer")
        if self.holder_alpha is not None and not 0 < self.holder_alpha <= 1:
            raise ParameterError("holder_alpha must lie in (0, 1]")

    def __call__(self, x):
        pts = as_points(x, self.dim)
        out = np.asarray(self.evaluator(pts), dtype=float)
        out = np.broadcast_to(out, pts.shape[:-1])
        return out[()] if out.ndim == 0 else out

    @classmethod
    def from_expr(cls, text, dim: int, **kw) -> "ScalarField":
        e = _expr.parse(text, dim)
        return cls(_expr.lambdify(e, dim), dim, expr=e, **kw)

    @classmethod
    def constant(cls, value: float, dim: int) -> "ScalarField":
        value = float(value)
        return cls(lambda p: np.full(p.shape[:-1], value), dim, expr=sp.Float(value))

    def derivative(self, axis: int) -> "ScalarField":
        """Exact partial derivative; needs ``expr``."""
        if self.expr is None:
            raise ParameterError("exact derivatives need an expression-based field")
        e = sp.diff(self.expr, _expr.symbols(self.dim)[axis])
        return ScalarField(_expr.lambdify(e, self.dim), self.dim, expr=e)

    # light arithmetic so that comparison functions and barriers compose
    def _combine(self, other, op, sym_op):
        if isinstance(other, ScalarField):
            e = sym_op(self.expr, other.expr) if self.expr is not None and other.expr is not None else None
            return ScalarField(lambda p: op(self.evaluator(p), other.evaluator(p)), self.dim, expr=e)
        value = float(other)
        e = sym_op(self.expr, sp.Float(value)) if self.expr is not None else None
        return ScalarField(lambda p: op(self.evaluator(p), value), self.dim, expr=e)

    def __add__(self, other):
        return self._combine(other, np.add, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract, lambda a, b: a - b)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._combine(other, np.multiply, lambda a, b: a * b)

    __rmul__ = __mul__

    def __neg__(self):
        e = -self.expr if self.expr is not None else None
        return ScalarField(lambda p: -np.asarray(self.evaluator(p), dtype=float), self.dim, expr=e)


def as_field(obj, dim: int) -> ScalarField:
    """Accept a ScalarField, a number, an expression string or a callable."""
    if isinstance(obj, ScalarField):
        if obj.dim != dim:
            raise DomainError(f"field has dimension {obj.dim}, expected {dim}")
        return obj
    if isinstance(obj, GridFunction):
        return obj.interpolant()
    if isinstance(obj, (int, float, np.floating, np.integer)):
        return ScalarField.constant(float(obj), dim)
    if isinstance(obj, (str, sp.Expr)):
        return ScalarField.from_expr(obj, dim)
    if callable(obj):
        return ScalarField(obj, dim)
    raise ParameterError(f"cannot interpret {type(obj).__name__} as a scalar field")


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

DOMAIN_KINDS = ("box", "ball", "half_cuboid", "chart_atlas")


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """A bounded region: box, ball, half cuboid or chart atlas.

    Use the classmethod constructors.  For ``chart_atlas`` the region is
    described by an ``inside`` predicate, a dense set of boundary samples and
    a bounding box; the ``charts`` payload is whatever the caller attaches
    (see :mod:`ellipext.extension`).
    """

    kind: str
    dim: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    inside: Optional[Callable] = None
    boundary_points: Optional[np.ndarray] = None
    charts: tuple = ()
    boundary_order: float = 2.0
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    @classmethod
    def box(cls, lower, upper, boundary_order: float = math.inf) -> "DomainSpec":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo) or not np.all(np.isfinite(hi - lo)):
            raise DomainError("box needs finite lower < upper on every axis")
        return cls("box", lo.size, lower=lo, upper=hi, boundary_order=boundary_order)

    @classmethod
    def ball(cls, center, radius: float, boundary_order: float = math.inf) -> "DomainSpec":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if not (radius > 0 and math.isfinite(radius)):
            raise DomainError("ball radius must be positive and finite")
        return cls("ball", c.size, center=c, radius=float(radius), boundary_order=boundary_order)

    @classmethod
    def half_cuboid(cls, R: float, dim: int) -> "DomainSpec":
        """``[-R, R]^(n-1) x [0, R]``; the flat face is ``x_n = 0``."""
        if not R > 0:
            raise DomainError("half cuboid needs R > 0")
        lo = np.full(dim, -float(R))
        lo[-1] = 0.0
        return cls("half_cuboid", dim, lower=lo, upper=np.full(dim, float(R)))

    @classmethod
    def chart_atlas(cls, inside, boundary_points, lower, upper, charts=(), boundary_order=4.0):
        bp = np.asarray(boundary_points, dtype=float)
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if bp.ndim != 2 or bp.shape[1] != lo.size or len(bp) < 2:
            raise DomainError("chart atlas needs an (m, n) array of boundary samples")
        return cls("chart_atlas", lo.size, lower=lo, upper=hi, inside=inside, boundary_points=bp,
                   charts=tuple(charts), boundary_order=boundary_order, _tree=cKDTree(bp))

    # geometry -------------------------------------------------------------

    def bounding_box(self):
        if self.kind == "ball":
            return self.center - self.radius, self.center + self.radius
        return self.lower.copy(), self.upper.copy()

    def diameter(self) -> float:
        if self.kind == "ball":
            return 2 * self.radius
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def contains(self, x, closed: bool = True, tol: float = 1e-12) -> np.ndarray:
        pts = as_points(x, self.dim)
        if self.kind in ("box", "half_cuboid"):
            if closed:
                return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=-1)
            return np.all((pts > self.lower + tol) & (pts < self.upper - tol), axis=-1)
        if self.kind == "ball":
            r = np.linalg.norm(pts - self.center, axis=-1)
            return r <= self.radius + tol if closed else r < self.radius - tol
        inside = np.asarray(self.inside(pts), dtype=bool)
        if closed:
            return inside | (self.boundary_distance(pts) <= tol)
        return inside & (self.boundary_distance(pts) > tol)

    def boundary_distance(self, x, portion: Optional[Sequence] = None) -> np.ndarray:
        """Unsigned distance to the boundary.

        ``portion`` lists boundary faces ``(axis, side)`` (side 0 = lower,
        1 = upper) to leave out, which gives the distance to ``∂Ω ∖ T`` used by
        the boundary-portion weighted norms.  Only boxes support it.
        """
        pts = as_points(x, self.dim)
        if self.kind in ("box", "half_cuboid"):
            q = np.maximum(self.lower - pts, pts - self.upper)
            inside = np.all(q <= 0, axis=-1)
            if portion:
                faces = [(a, s) for a in range(self.dim) for s in (0, 1) if (a, s) not in set(map(tuple, portion))]
                if not faces:
                    raise DomainError("the boundary portion cannot be the whole boundary")
                d_in = np.min([pts[..., a] - self.lower[a] if s == 0 else self.upper[a] - pts[..., a]
                               for a, s in faces], axis=0)
            else:
                d_in = -np.max(q, axis=-1)
            d_out = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return np.where(inside, d_in, d_out)
        if portion:
            raise DomainError("boundary portions are only supported on boxes")
        if self.kind == "ball":
            return np.abs(np.linalg.norm(pts - self.center, axis=-1) - self.radius)
        d, _ = self._tree.query(pts.reshape(-1, self.dim))
        return d.reshape(pts.shape[:-1])

    def mesh(self, h: float):
        """Regular mesh over the bounding box: ``(origin, spacing, shape)``.

        The spacing is adjusted so that the first axis is divided evenly;
        the remaining extents must then be integer multiples of it.
        """
        if not h > 0:
            raise ParameterError("mesh spacing must be positive")
        lo, hi = self.bounding_box()
        ext = hi - lo
        n0 = max(2, int(round(ext[0] / h)))
        step = ext[0] / n0
        counts = []
        for e in ext:
            k = int(round(e / step))
            if abs(k * step - e) > 1e-9 * max(e, 1.0):
                raise DomainError(f"extent {e} is not commensurate with mesh spacing {step}")
            counts.append(k + 1)
        return lo, step, tuple(counts)

    def mesh_points(self, h: float):
        origin, step, shape = self.mesh(h)
        pts = mesh_coordinates(origin, step, shape)
        return pts, self.contains(pts, closed=True, tol=1e-9 * step), step

    def sample_boundary(self, m: int, rng=None) -> np.ndarray:
        """``m`` points on the boundary (deterministic for a seeded ``rng``)."""
        rng = np.random.default_rng(0) if rng is None else rng
        if self.kind == "ball":
            if self.dim == 1:
                return np.array([[self.center[0] - self.radius], [self.center[0] + self.radius]])
            v = rng.standard_normal((m, self.dim))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return self.center + self.radius * v
        if self.kind == "chart_atlas":
            idx = rng.choice(len(self.boundary_points), size=min(m, len(self.boundary_points)), replace=False)
            return self.boundary_points[np.sort(idx)]
        if self.dim == 1:
            return np.array([[self.lower[0]], [self.upper[0]]])
        pts = self.lower + (self.upper - self.lower) * rng.random((m, self.dim))
        axis = rng.integers(0, self.dim, size=m)
        side = rng.integers(0, 2, size=m)
        pts[np.arange(m), axis] = np.where(side == 0, self.lower[axis], self.upper[axis])
        return pts

    def sample_interior(self, m: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(0) if rng is None else rng
        lo, hi = self.bounding_box()
        out = []
        while sum(len(o) for o in out) < m:
            cand = lo + (hi - lo) * rng.random((2 * m, self.dim))
            out.append(cand[self.contains(cand, closed=False)])
        return np.concatenate(out)[:m]


def mesh_coordinates(origin, h: float, shape) -> np.ndarray:
    axes = [origin[i] + h * np.arange(shape[i]) for i in range(len(shape))]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


# ---------------------------------------------------------------------------
# grid functions
# ---------------------------------------------------------------------------


class GridFunction:
    """Values on a regular mesh with uniform spacing ``h``.

    ``mask`` marks the nodes that belong to the (closed) domain; nodes outside
    it carry the value 0 and are ignored by the norms.  Values are read-only.
    """

    def __init__(self, values, h: float, origin=None, mask=None, alpha: Optional[float] = None):
        vals = np.array(values, dtype=float)
        if vals.ndim == 0:
            raise DomainError("grid function needs at least one axis")
        if min(vals.shape) < 3:
            raise DomainError(f"mesh needs at least 3 points per axis, got shape {vals.shape}")
        if not h > 0:
            raise ParameterError("grid spacing must be positive")
        if not np.all(np.isfinite(vals)):
            raise DomainError("grid function values must be finite")
        self.values = vals
        self.values.flags.writeable = False
        self.h = float(h)
        self.origin = np.zeros(vals.ndim) if origin is None else np.atleast_1d(np.asarray(origin, dtype=float))
        if self.origin.size != vals.ndim:
            raise DomainError("origin does not match the number of axes")
        if mask is not None:
            mask = np.array(mask, dtype=bool)
            if mask.shape != vals.shape:
                raise DomainError("mask shape differs from value shape")
            mask.flags.writeable = False
        self.mask = mask
        self.alpha = alpha

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def extents(self):
        return [(float(o), float(o + self.h * (k - 1))) for o, k in zip(self.origin, self.shape)]

    def axes(self):
        return [o + self.h * np.arange(k) for o, k in zip(self.origin, self.shape)]

    def points(self) -> np.ndarray:
        return mesh_coordinates(self.origin, self.h, self.shape)

    def domain_mask(self) -> np.ndarray:
        return np.ones(self.shape, dtype=bool) if self.mask is None else self.mask

    def box(self) -> DomainSpec:
        lo, hi = zip(*self.extents)
        return DomainSpec.box(lo, hi)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(values, self.h, self.origin, self.mask, self.alpha)

    def index_of(self, x) -> tuple:
        """Mesh index of a point lying on the mesh (within 1e-9 h)."""
        pos = (as_points(x, self.dim) - self.origin) / self.h
        idx = np.rint(pos)
        if np.any(np.abs(pos - idx) > 1e-9) or np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise DomainError(f"point {np.asarray(x).tolist()} is not a node of the mesh")
        return tuple(int(i) for i in idx)

    @classmethod
    def sample(cls, u, domain: DomainSpec, h: float, alpha=None) -> "GridFunction":
        u = as_field(u, domain.dim)
        pts, inside, step = domain.mesh_points(h)
        vals = np.zeros(inside.shape)
        vals[inside] = u(pts[inside])
        mask = None if np.all(inside) else inside
        return cls(vals, step, pts[(0,) * domain.dim], mask, alpha)

    def interpolant(self, method: str = "cubic") -> ScalarField:
        """Piecewise-cubic interpolant, used where smooth evaluation off the mesh is needed."""
        if self.dim == 1:
            spline = CubicSpline(self.axes()[0], self.values)
            return ScalarField(lambda p: spline(p[..., 0]), 1, holder_alpha=self.alpha)
        interp = RegularGridInterpolator(self.axes(), self.values, method=method)
        return ScalarField(lambda p: interp(p.reshape(-1, self.dim)).reshape(p.shape[:-1]), self.dim,
                           holder_alpha=self.alpha)

    # serialisation ----------------------------------------------------------

    def to_csv(self, path) -> Path:
        """Write ``x1,...,xn,value`` rows in row-major order plus a JSON sidecar."""
        path = Path(path)
        pts = self.points().reshape(-1, self.dim)
        vals = self.values.reshape(-1)
        keep = self.domain_mask().reshape(-1)
        header = ",".join([f"x{i + 1}" for i in range(self.dim)] + ["value"])
        lines = [header]
        for p, v in zip(pts[keep], vals[keep]):
            lines.append(",".join(format_float(t) for t in (*p, v)))
        path.write_text("\n".join(lines) + "\n")
        meta = {"h": self.h, "extents": self.extents, "alpha": self.alpha, "shape": list(self.shape),
                "masked": self.mask is not None}
        path.with_suffix(".json").write_text(dumps(meta) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        h = float(meta["h"])
        origin = np.array([e[0] for e in meta["extents"]])
        shape = tuple(meta["shape"])
        vals = np.zeros(shape)
        mask = np.zeros(shape, dtype=bool)
        idx = np.rint((data[:, :-1] - origin) / h).astype(int)
        vals[tuple(idx.T)] = data[:, -1]
        mask[tuple(idx.T)] = True
        return cls(vals, h, origin, mask if meta.get("masked") else None, meta.get("alpha"))


def format_float(x) -> str:
    """17 significant digits; enough to round-trip every double."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return "null"
    return format(x, ".17g")


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys and 17-significant-digit floats."""
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ", ".join(f"{json.dumps(k)}: {dumps(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


# ---------------------------------------------------------------------------
# sampled norms
# ---------------------------------------------------------------------------


def _samples(u, domain: Optional[DomainSpec], h: Optional[float], points=None):
    """Sample points and values of ``u`` on the closed domain."""
    if points is not None:
        pts = np.asarray(points, dtype=float)
        dim = domain.dim if domain is not None else (u.dim if hasattr(u, "dim") else 1)
        pts = as_points(pts, dim).reshape(-1, dim)
        if len(pts) == 0:
            raise DomainError("empty sample set")
        vals = as_field(u, dim)(pts) if not isinstance(u, GridFunction) else u.interpolant()(pts)
        return pts, np.asarray(vals, dtype=float).reshape(len(pts), -1)
    if isinstance(u, GridFunction):
        mask = u.domain_mask()
        if domain is not None:
            mask = mask & domain.contains(u.points(), closed=True, tol=1e-9 * u.h)
        pts = u.points()[mask]
        return pts, u.values[mask].reshape(-1, 1)
    if domain is None:
        raise DomainError("a domain is required to sample a scalar field")
    if h is None:
        h = domain.diameter() / 200
    pts, inside, _ = domain.mesh_points(h)
    pts = pts[inside]
    u = as_field(u, domain.dim)
    vals = np.asarray(u(pts), dtype=float)
    return pts, vals.reshape(len(pts), -1)


def sup_norm(u, domain: Optional[DomainSpec] = None, h: Optional[float] = None, points=None,
             refine: int = 0) -> float:
    """Maximum of ``|u|`` over the mesh of the closed domain.

    With ``refine > 0`` the ``refine`` largest mesh values are polished by a
    local Nelder-Mead search (kept inside ``domain`` when one is given),
    which removes the O(h^2) gap between mesh maximum and true maximum.
    """
    pts, vals = _samples(u, domain, h, points)
    if len(pts) == 0:
        raise DomainError("empty sample mesh")
    norms = np.linalg.norm(vals, axis=1)
    best = float(np.max(norms))
    if refine and not isinstance(u, GridFunction):
        f = as_field(u, pts.shape[1])
        step = h if h is not None else (domain.diameter() / 200 if domain is not None else 1e-2)

        def neg(p):
            if domain is not None and not domain.contains(p, closed=True):
                return 0.0
            return -abs(float(f(p)))

        for i in np.argsort(norms)[::-1][:refine]:
            simplex = pts[i] + np.vstack([np.zeros(pts.shape[1]), 0.5 * step * np.eye(pts.shape[1])])
            res = optimize.minimize(neg, pts[i], method="Nelder-Mead",
                                    options={"initial_simplex": simplex, "xatol": 1e-10, "fatol": 1e-15})
            best = max(best, -float(res.fun))
    return best


def _pair_max(pts, vals, alpha, weights=None, beta=0.0, rng=None, limit=ALL_PAIRS_LIMIT, n_random=2_000_000):
    """Max over sampled pairs of ``w |v(x) - v(y)| / |x - y|^alpha``.

    ``w`` is ``min(d(x), d(y))**beta`` when ``weights`` (the distances) are
    given.  All pairs are visited up to ``limit`` points; beyond that, every
    mesh-neighbour pair plus stratified random pairs.
    """
    m = len(pts)
    if m < 2:
        raise DomainError("need at least two sample points")
    best = 0.0

    def update(i, j):
        nonlocal best
        d = np.linalg.norm(pts[i] - pts[j], axis=-1)
        dv = np.linalg.norm(vals[i] - vals[j], axis=-1)
        ok = d > 0
        if not np.any(ok):
            return
        q = dv[ok] / d[ok] ** alpha
        if weights is not None:
            q = q * np.minimum(weights[i], weights[j])[ok] ** beta
        if q.size:
            best = max(best, float(np.max(q)))

    if m <= limit:
        chunk = max(1, 4_000_000 // m)
        for s in range(0, m, chunk):
            rows = np.arange(s, min(s + chunk, m))
            cols = np.arange(s, m)
            i, j = np.meshgrid(rows, cols, indexing="ij")
            keep = j > i
            update(i[keep], j[keep])
        return best
    rng = np.random.default_rng(0) if rng is None else rng
    tree = cKDTree(pts)
    k = min(m, 3 ** pts.shape[1] + 1)
    _, nbr = tree.query(pts, k=k)
    i = np.repeat(np.arange(m), k - 1)
    update(i, nbr[:, 1:].reshape(-1))
    strata = np.array_split(rng.permutation(m), 16)
    per = n_random // (len(strata) ** 2)
    for a in strata:
        for b in strata:
            update(rng.choice(a, per), rng.choice(b, per))
    return best


def holder_seminorm(u, alpha: float, domain: Optional[DomainSpec] = None, h: Optional[float] = None,
                    sample_strategy: str = "auto", points=None, seed: int = 0) -> float:
    """Sampled Hölder seminorm ``max |u(x) - u(y)| / |x - y|^alpha``.

    A lower bound for the true seminorm.  ``sample_strategy`` is ``"auto"``
    (all pairs up to 2e4 points), ``"all"`` or ``"random"``.
    """
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    pts, vals = _samples(u, domain, h, points)
    limit = {"auto": ALL_PAIRS_LIMIT, "all": math.inf, "random": 0}[sample_strategy]
    return _pair_max(pts, vals, alpha, rng=np.random.default_rng(seed), limit=limit)


def weighted_interior_norm(u, domain: DomainSpec, beta: float, order: int = 0,
                           portion: Optional[Sequence] = None, h: Optional[float] = None) -> float:
    """``sup d(x)^beta |u(x)|`` with ``d`` the distance to ``∂Ω₀`` (or ``∂Ω₀ ∖ T``)."""
    if beta < 0:
        raise ParameterError("beta must be non-negative")
    if order != 0:
        raise ParameterError("only order 0 is a pointwise weighted norm; use primed_c2alpha_norm")
    pts, vals = _samples(u, domain, h)
    d = domain.boundary_distance(pts, portion)
    return float(np.max(d**beta * np.linalg.norm(vals, axis=1)))


def weighted_holder_seminorm(u, domain: DomainSpec, alpha: float, beta: float,
                             portion: Optional[Sequence] = None, h: Optional[float] = None,
                             seed: int = 0) -> float:
    """Weighted Hölder seminorm; a pair is weighted by ``min(d(x), d(y))^beta``."""
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    if beta < 0:
        raise ParameterError("beta must be non-negative")
    pts, vals = _samples(u, domain, h)
    d = domain.boundary_distance(pts, portion)
    return _pair_max(pts, vals, alpha, weights=d, beta=beta, rng=np.random.default_rng(seed))


def grid_derivatives(values: np.ndarray, h: float):
    """Gradient ``(..., n)`` and Hessian ``(..., n, n)`` by ``np.gradient``."""
    n = values.ndim
    grad = np.gradient(values, h, edge_order=2) if n > 1 else [np.gradient(values, h, edge_order=2)]
    hess = np.empty(values.shape + (n, n))
    for i in range(n):
        gi = np.gradient(grad[i], h, edge_order=2) if n > 1 else [np.gradient(grad[i], h, edge_order=2)]
        for j in range(n):
            hess[..., i, j] = gi[j]
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    return np.stack(grad, axis=-1), hess


def primed_c2alpha_norm(u, domain: DomainSpec, alpha: float, h: Optional[float] = None,
                        portion: Optional[Sequence] = None) -> float:
    """Interior norm ``|u|^(0) + |Du|^(1) + |D²u|^(2) + [D²u]^(2+alpha)``.

    Derivatives come from finite differences on the bounding-box mesh.
    """
    if h is None:
        h = domain.diameter() / 100
    u = as_field(u, domain.dim) if not isinstance(u, GridFunction) else u.interpolant()
    origin, step, shape = domain.mesh(h)
    pts = mesh_coordinates(origin, step, shape)
    vals = np.asarray(u(pts), dtype=float)
    grad, hess = grid_derivatives(vals, step)
    inside = domain.contains(pts, closed=True, tol=1e-9 * step)
    d = domain.boundary_distance(pts[inside], portion)
    n = domain.dim
    terms = [
        np.max(np.abs(vals[inside])),
        np.max(d * np.linalg.norm(grad[inside], axis=-1)),
        np.max(d**2 * np.linalg.norm(hess[inside].reshape(-1, n * n), axis=-1)),
        _pair_max(pts[inside], hess[inside].reshape(-1, n * n), alpha, weights=d, beta=2 + alpha),
    ]
    return float(sum(terms))


@dataclass
class NormReport:
    sup_norm: float
    holder_seminorm: float
    alpha: float
    weighted_values: dict
    sample_count: int


def norm_report(u, domain: DomainSpec, alpha: float, betas=(0.0, 1.0, 2.0), h: Optional[float] = None) -> NormReport:
    pts, vals = _samples(u, domain, h)
    weighted = {(0, float(b)): weighted_interior_norm(u, domain, b, h=h) for b in betas}
    return NormReport(sup_norm(u, domain, h), holder_seminorm(u, alpha, domain, h), alpha, weighted, len(pts))


# ---------------------------------------------------------------------------
# mollifiers and cutoffs
# ---------------------------------------------------------------------------


def bump(r) -> np.ndarray:
    """``exp(-1/(1 - r^2))`` for ``|r| < 1`` and 0 otherwise."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_mass(n: int) -> float:
    """Integral of ``bump(|x|)`` over the unit ball in R^n."""
    radial, _ = integrate.quad(lambda r: float(bump(r)) * r ** (n - 1), 0, 1, epsabs=1e-15, epsrel=1e-13, limit=200)
    sphere = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    return sphere * radial


def mollifier(k: float, dim: int) -> ScalarField:
    """The dirac-sequence member ``phi_k``: supported in ``B_{1/k}``, unit mass."""
    if not k > 0:
        raise ParameterError("k must be positive")
    scale = k**dim / _bump_mass(dim)
    return ScalarField(lambda p: scale * bump(k * np.linalg.norm(p, axis=-1)), dim)


def mollifier_weights(k: float, h: float, dim: int) -> np.ndarray:
    """Discrete kernel of ``phi_k`` on a mesh of spacing ``h``.

    The weights are non-negative and sum to exactly one, i.e. the kernel is
    normalised by the rectangle rule, which is spectrally accurate for a
    smooth compactly supported integrand.
    """
    m = int(math.floor((1.0 / k) / h * (1 - 1e-12)))
    if m == 0:
        return np.ones((1,) * dim)
    offs = mesh_coordinates(np.full(dim, -m * h), h, (2 * m + 1,) * dim)
    w = bump(k * np.linalg.norm(offs, axis=-1))
    return w / w.sum()


def mollify(u: GridFunction, k: float, inner: Optional[DomainSpec] = None) -> GridFunction:
    """``phi_k * u`` on the nodes of ``inner``.

    ``inner`` must keep a margin larger than ``1/k`` from the boundary of
    the box carrying ``u``; by default it is that box shrunk by ``1/k``.
    """
    if not k > 0:
        raise ParameterError("k must be positive")
    if u.mask is not None and not np.all(u.mask):
        raise DomainError("mollify needs a grid function on a full box")
    lo = np.array([e[0] for e in u.extents])
    hi = np.array([e[1] for e in u.extents])
    if inner is None:
        pad = math.ceil((1.0 / k) / u.h * (1 + 1e-9) + 1e-9) * u.h
        inner = DomainSpec.box(lo + pad, hi - pad)
    ilo, ihi = inner.bounding_box()
    margin = float(np.min(np.concatenate([ilo - lo, hi - ihi])))
    if not margin > 1.0 / k:
        need = 1.0 / margin if margin > 0 else math.inf
        raise DomainError(f"evaluation set is {margin:.3g} from the boundary; mollify needs k > {need:.6g}")
    w = mollifier_weights(k, u.h, u.dim)
    conv = fftconvolve(u.values, w, mode="same") if w.size > 1 else u.values
    first = np.ceil((ilo - lo) / u.h - 1e-9).astype(int)
    last = np.floor((ihi - lo) / u.h + 1e-9).astype(int)
    sl = tuple(slice(a, b + 1) for a, b in zip(first, last))
    keep = inner.contains(u.points()[sl], closed=True, tol=1e-9 * u.h)
    out = np.where(keep, conv[sl], 0.0)
    return GridFunction(out, u.h, lo + first * u.h, None if np.all(keep) else keep, u.alpha)


@lru_cache(maxsize=1)
def _gauss_legendre(order: int = 80):
    return special.roots_legendre(order)


def smooth_step(t) -> np.ndarray:
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``.

    It is the mollified indicator of ``[1/2, inf)`` with a bump of radius
    1/2, evaluated by Gauss-Legendre quadrature of the bump.
    """
    t = np.asarray(t, dtype=float)
    nodes, weights = _gauss_legendre()
    total = (bump(nodes) * weights).sum()

    def lower_part(s):
        s = np.clip(s, 0.0, 0.5)
        # map [-1, 1] onto [-1, 2 s - 1]
        tau = -1 + s[..., None] * (nodes + 1)
        return (bump(tau) * weights).sum(axis=-1) * s / total

    # evaluate the upper half by symmetry so that 1 is approached exactly
    out = np.where(t <= 0.5, lower_part(t), 1.0 - lower_part(1.0 - t))
    return np.clip(np.where(t <= 0, 0.0, np.where(t >= 1, 1.0, out)), 0.0, 1.0)


def _set_margin(inner: DomainSpec, outer: DomainSpec) -> float:
    if inner.dim != outer.dim:
        raise DomainError("inner and outer domains differ in dimension")
    if outer.kind == "ball":
        if inner.kind == "ball":
            return outer.radius - np.linalg.norm(inner.center - outer.center) - inner.radius
        lo, hi = inner.bounding_box()
        corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij")).reshape(inner.dim, -1).T
        return outer.radius - np.max(np.linalg.norm(corners - outer.center, axis=1))
    if outer.kind in ("box", "half_cuboid"):
        lo, hi = inner.bounding_box()
        return float(np.min(np.concatenate([lo - outer.lower, outer.upper - hi])))
    raise DomainError("cutoff supports box and ball outer sets")


def cutoff(inner: DomainSpec, outer: DomainSpec) -> ScalarField:
    """Smooth ``eta`` with ``eta = 1`` on ``inner`` and support compactly in ``outer``.

    With margin ``m = dist(inner, ∂outer)``, ``eta`` is the mollified
    indicator of the ``m/2``-neighbourhood of ``inner``: it equals 1 up to
    distance ``m/4`` and vanishes beyond ``3m/4``.  Boxes inside boxes use the
    product of one-dimensional profiles, everything else the distance to
    ``inner``.
    """
    m = _set_margin(inner, outer)
    if not m > 0:
        raise DomainError(f"inner set is not compactly contained in outer (margin {m:.3g})")
    if inner.kind in ("box", "half_cuboid") and outer.kind in ("box", "half_cuboid"):
        lo, hi = inner.bounding_box()

        def eta(p):
            q = np.maximum(lo - p, p - hi).clip(min=0.0)
            return np.prod(1 - smooth_step((q - m / 4) / (m / 2)), axis=-1)

        return ScalarField(eta, inner.dim, support_hint=(lo - 0.75 * m, hi + 0.75 * m))

    def eta(p):
        if inner.kind == "ball":
            t = np.maximum(np.linalg.norm(p - inner.center, axis=-1) - inner.radius, 0.0)
        else:
            lo, hi = inner.bounding_box()
            t = np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=-1)
        return 1 - smooth_step((t - m / 4) / (m / 2))

    return ScalarField(eta, inner.dim)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


@dataclass
class Derivatives:
    gradient: np.ndarray
    hessian: Optional[np.ndarray] = None


def fd_weights(offsets, deriv: int) -> np.ndarray:
    """Weights ``w`` with ``sum w_j f(o_j) ≈ f^(deriv)(0)`` (unit spacing)."""
    o = np.asarray(offsets, dtype=float)
    p = len(o)
    if deriv >= p:
        raise ParameterError("stencil too short for the requested derivative")
    V = np.vander(o, p, increasing=True).T / np.array([math.factorial(k) for k in range(p)])[:, None]
    rhs = np.zeros(p)
    rhs[deriv] = 1.0
    return np.linalg.solve(V, rhs)


_FORWARD_1 = np.array([-1.5, 2.0, -0.5])
_FORWARD_2 = np.array([2.0, -5.0, 4.0, -1.0])


def fd_derivatives(u, x, h: float, order: int = 2, one_sided_axis: Optional[int] = None,
                   direction: int = 1, domain: Optional[DomainSpec] = None) -> Derivatives:
    """Finite-difference gradient (and Hessian for ``order=2``) at ``x``.

    Central differences, O(h^2).  Along ``one_sided_axis`` the stencil only
    looks in ``direction`` (+1 forward, -1 backward) with second-order
    one-sided formulas; mixed derivatives then difference the central
    tangential derivative one-sidedly.
    """
    if order not in (1, 2):
        raise ParameterError("order must be 1 or 2")
    if not h > 0:
        raise ParameterError("h must be positive")
    if isinstance(u, GridFunction):
        u = u.interpolant()
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    f = as_field(u, n)
    eye = np.eye(n)

    def pts_for(offsets):
        return x + h * np.asarray(offsets, dtype=float)

    stencil = []  # collect every evaluation point for the domain check

    def ev(offsets):
        p = pts_for(offsets)
        stencil.append(p.reshape(-1, n))
        return np.asarray(f(p), dtype=float)

    def d1(axis, offs_base=np.zeros(n)):
        """First derivative along ``axis`` at ``x + h*offs_base``."""
        if axis == one_sided_axis:
            offs = offs_base + direction * np.outer(np.arange(3), eye[axis])
            return direction * (_FORWARD_1 @ ev(offs)) / h
        offs = offs_base + np.array([eye[axis], -eye[axis]])
        v = ev(offs)
        return (v[0] - v[1]) / (2 * h)

    grad = np.array([d1(i) for i in range(n)])
    hess = None
    if order == 2:
        hess = np.empty((n, n))
        for i in range(n):
            if i == one_sided_axis:
                offs = direction * np.outer(np.arange(4), eye[i])
                hess[i, i] = _FORWARD_2 @ ev(offs) / h**2
            else:
                v = ev(np.array([eye[i], np.zeros(n), -eye[i]]))
                hess[i, i] = (v[0] - 2 * v[1] + v[2]) / h**2
            for j in range(i):
                if one_sided_axis in (i, j):
                    k = one_sided_axis
                    other = j if k == i else i
                    vals = np.array([d1(other, direction * s * eye[k]) for s in range(3)])
                    hess[i, j] = hess[j, i] = direction * (_FORWARD_1 @ vals) / h
                else:
                    v = ev(np.array([eye[i] + eye[j], eye[i] - eye[j], -eye[i] + eye[j], -eye[i] - eye[j]]))
                    hess[i, j] = hess[j, i] = (v[0] - v[1] - v[2] + v[3]) / (4 * h**2)
    if domain is not None:
        allp = np.concatenate(stencil)
        bad = ~domain.contains(allp, closed=True, tol=1e-12)
        if np.any(bad):
            raise StencilError(f"stencil point {allp[bad][0].tolist()} lies outside the domain")
    return Derivatives(grad, hess)


def one_sided_derivatives(f, x0, axis: int, h: float, direction: int = 1, points: int = 8):
    """High-order one-sided first and second derivatives along ``axis``.

    Used for boundary-condition residuals where second-order formulas are
    too noisy.  Returns ``(d1, d2)``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[-1]
    offs = np.arange(points, dtype=float)
    shifts = direction * h * offs[:, None] * np.eye(n)[axis]
    pts = x0[..., None, :] + shifts
    vals = np.asarray(f(pts), dtype=float)
    w1 = fd_weights(offs, 1) * direction / h
    w2 = fd_weights(offs, 2) / h**2
    return vals @ w1, vals @ w2
