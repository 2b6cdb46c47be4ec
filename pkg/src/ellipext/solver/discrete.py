"""Finite-difference discretisation ``L_h u = A u_int + B u_bdry`` and the
direct Dirichlet solve.

Second derivatives use (possibly non-uniform) central differences; first
derivatives are central when the cell Péclet number ``|b_i| h / (2 a_ii)``
is at most one and upwind otherwise.  Without mixed terms and with
``c <= 0`` the matrix ``-A`` is an M-matrix and ``B >= 0``, which gives a
discrete maximum principle.  On balls the neighbours across the sphere
are replaced by the sphere intersections (Shortley-Weller).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from ..elliptic_op import EllipticOperator, build_comparison_pair, interior_sup_bound
from ..errors import ConvergenceError, DomainError, EllipticityError
from ..fields import DomainSpec, GridFunction, ScalarField, as_field, mesh_coordinates

NEAR = 0.01  # nodes closer than NEAR*h to the sphere are boundary nodes
DIRECT_LIMIT = 10_000


class Discretization:
    """Mesh, unknown numbering and the matrices ``A`` and ``B`` of ``L_h``."""

    def __init__(self, L: EllipticOperator, domain: DomainSpec, h: float):
        if domain.kind not in ("box", "ball", "half_cuboid"):
            raise DomainError("the solver supports box and ball domains")
        if L.dim != domain.dim:
            raise DomainError("operator and domain dimensions differ")
        self.L, self.domain = L, domain
        self.origin, self.h, self.shape = domain.mesh(h)
        n = self.dim = domain.dim
        pts = mesh_coordinates(self.origin, self.h, self.shape)
        self.mesh_points = pts
        if domain.kind == "ball":
            d = np.linalg.norm(pts - domain.center, axis=-1)
            interior = d < domain.radius - NEAR * self.h
            near = np.abs(d - domain.radius) <= NEAR * self.h
        else:
            idx = np.indices(self.shape)
            edge = np.zeros(self.shape, dtype=bool)
            for ax in range(n):
                edge |= (idx[ax] == 0) | (idx[ax] == self.shape[ax] - 1)
            interior, near = ~edge, edge
        self.interior_mask = interior
        self.node_mask = interior | near
        self.node_id = -np.ones(self.shape, dtype=int)
        self.node_id[interior] = np.arange(int(interior.sum()))
        self.interior_index = np.argwhere(interior)
        self.interior_points = pts[interior]
        self._bkeys: dict = {}
        self._bpts: list = []
        self._bnode: list = []  # mesh index of boundary points that are nodes (else None)
        self._assemble()

    # ---------------------------------------------------------------------
    @property
    def n_unknowns(self) -> int:
        return len(self.interior_points)

    @property
    def boundary_points(self) -> np.ndarray:
        return np.array(self._bpts).reshape(-1, self.dim)

    def _bpoint(self, x, node=None) -> int:
        key = tuple(np.round(np.asarray(x) / self.h * 1e6).astype(np.int64))
        if key not in self._bkeys:
            self._bkeys[key] = len(self._bpts)
            self._bpts.append(np.asarray(x, dtype=float))
            self._bnode.append(node)
        return self._bkeys[key]

    def _neighbour(self, idx, off, p):
        """Target of the stencil arm from node ``idx`` in direction ``off``.

        Returns ``(kind, index, distance)`` with kind ``'u'`` (unknown) or
        ``'g'`` (boundary point).
        """
        j = idx + off
        step = float(np.linalg.norm(off)) * self.h
        inside_mesh = np.all(j >= 0) and np.all(j < np.array(self.shape))
        if inside_mesh:
            jt = tuple(j)
            if self.interior_mask[jt]:
                return "u", int(self.node_id[jt]), step
            if self.node_mask[jt] or np.count_nonzero(off) > 1 or self.domain.kind != "ball":
                return "g", self._bpoint(self.mesh_points[jt], jt if self.node_mask[jt] else None), step
        if self.domain.kind == "ball" and np.count_nonzero(off) == 1:
            s = off / np.linalg.norm(off)
            dv = p - self.domain.center
            ds = float(dv @ s)
            t = -ds + np.sqrt(ds * ds + self.domain.radius**2 - float(dv @ dv))
            t = min(t, self.h)
            return "g", self._bpoint(p + t * s), t
        return "g", self._bpoint(p + off * self.h), step

    def _assemble(self):
        n, h = self.dim, self.h
        A_all, B_all, C_all = self.L.coefficients(self.interior_points)
        rows_a, cols_a, vals_a = [], [], []
        rows_b, cols_b, vals_b = [], [], []
        eye = np.eye(n, dtype=int)
        self.has_cross_terms = bool(np.any(np.abs(A_all[:, ~np.eye(n, dtype=bool)]) > 0)) if n > 1 else False

        def add(row, target, w):
            kind, k, _ = target
            if kind == "u":
                rows_a.append(row), cols_a.append(k), vals_a.append(w)
            else:
                rows_b.append(row), cols_b.append(k), vals_b.append(w)

        for row, (idx, p) in enumerate(zip(self.interior_index, self.interior_points)):
            a, b, c = A_all[row], B_all[row], C_all[row]
            diag = float(c)
            for i in range(n):
                right = self._neighbour(idx, eye[i], p)
                left = self._neighbour(idx, -eye[i], p)
                hr, hl = right[2], left[2]
                wr = 2 * a[i, i] / (hr * (hl + hr))
                wl = 2 * a[i, i] / (hl * (hl + hr))
                diag -= wr + wl
                bi = b[i]
                if bi != 0:
                    if abs(bi) * max(hl, hr) / (2 * a[i, i]) > 1:
                        if bi > 0:
                            wr += bi / hr
                            diag -= bi / hr
                        else:
                            wl -= bi / hl
                            diag += bi / hl
                    else:
                        wr += bi * hl / (hr * (hl + hr))
                        wl -= bi * hr / (hl * (hl + hr))
                        diag += bi * (hr - hl) / (hl * hr)
                add(row, right, wr)
                add(row, left, wl)
                for j in range(i):
                    if a[i, j] == 0:
                        continue
                    w = 2 * a[i, j] / (4 * h * h)
                    for si, sj, sgn in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                        add(row, self._neighbour(idx, si * eye[i] + sj * eye[j], p), sgn * w)
            rows_a.append(row), cols_a.append(row), vals_a.append(diag)
        N, M = self.n_unknowns, len(self._bpts)
        self.A = sps.csr_matrix((vals_a, (rows_a, cols_a)), shape=(N, N))
        self.B = sps.csr_matrix((vals_b, (rows_b, cols_b)), shape=(N, M))
        self.A.sum_duplicates()
        self.B.sum_duplicates()
        self.c_values = np.asarray(C_all, dtype=float)

    # ---------------------------------------------------------------------
    def sample_interior(self, f) -> np.ndarray:
        return np.asarray(as_field(f, self.dim)(self.interior_points), dtype=float).reshape(-1)

    def sample_boundary(self, g) -> np.ndarray:
        return np.asarray(as_field(g, self.dim)(self.boundary_points), dtype=float).reshape(-1)

    def apply(self, u_int, u_bnd) -> np.ndarray:
        """``L_h u`` at the interior nodes."""
        return self.A @ u_int + self.B @ u_bnd

    def apply_field(self, v) -> np.ndarray:
        v = as_field(v, self.dim)
        return self.apply(self.sample_interior(v), self.sample_boundary(v))

    def is_monotone(self) -> bool:
        """``-A`` has non-positive off-diagonal entries and ``B >= 0``."""
        off = self.A - sps.diags(self.A.diagonal())
        return bool(off.min() >= 0 and (self.B.nnz == 0 or self.B.min() >= 0))

    def to_grid(self, u_int, u_bnd=None, alpha=None) -> GridFunction:
        vals = np.zeros(self.shape)
        vals[self.interior_mask] = u_int
        if u_bnd is not None:
            for k, node in enumerate(self._bnode):
                if node is not None:
                    vals[node] = u_bnd[k]
        return GridFunction(vals, self.h, self.origin, None if np.all(self.node_mask) else self.node_mask, alpha)

    def from_grid(self, u: GridFunction) -> np.ndarray:
        if u.shape != tuple(self.shape):
            raise DomainError("grid function lives on a different mesh")
        return u.values[self.interior_mask].copy()

    def solve(self, rhs: np.ndarray, A=None) -> np.ndarray:
        A = self.A if A is None else A
        if A.shape[0] <= DIRECT_LIMIT:
            return spla.splu(A.tocsc()).solve(rhs)
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres(A, rhs, M=M, rtol=1e-12, atol=0.0, restart=100, maxiter=2000)
        if info != 0:
            raise ConvergenceError("iterative solve did not converge", residual=float(np.abs(A @ x - rhs).max()))
        return x


def require_nonpositive_c(disc: Discretization):
    cmax = float(np.max(disc.c_values, initial=-np.inf))
    if cmax > 1e-12:
        raise EllipticityError(f"c must be <= 0 on the mesh (found {cmax:.3g}); shift by omega first")


@dataclass
class SolveReport:
    residual_norm: float
    iterations: int
    max_principle_ok: bool
    bound_check: dict = field(default_factory=dict)


@dataclass
class DirectSolution:
    u: GridFunction
    report: SolveReport
    disc: Discretization
    u_int: np.ndarray
    g_bnd: np.ndarray


def discrete_pair_check(disc: Discretization, f_int: np.ndarray, g_bnd: np.ndarray, tol: float = 1e-9):
    """Callable accepting ``v+`` when ``L_h v+ <= min(f, -||f||)`` and ``v+ >= |g|`` on the boundary."""
    F = float(np.max(np.abs(f_int), initial=0.0))

    def check(vp) -> bool:
        Lv = disc.apply_field(vp)
        vb = disc.sample_boundary(vp)
        return bool(np.all(Lv <= np.minimum(f_int, -F) + tol) and np.all(vb >= np.abs(g_bnd) - tol))

    return check


def direct_solve(L: EllipticOperator, f, g, domain: DomainSpec, h: float, check_bounds: bool = True,
                 disc: Optional[Discretization] = None) -> DirectSolution:
    """Solve ``L_h u = f`` with ``u = g`` on the boundary by sparse LU."""
    disc = Discretization(L, domain, h) if disc is None else disc
    require_nonpositive_c(disc)
    f_int = disc.sample_interior(f)
    g_bnd = disc.sample_boundary(g)
    rhs = f_int - disc.B @ g_bnd
    try:
        u_int = disc.solve(rhs)
    except RuntimeError as exc:
        raise ConvergenceError(f"singular discrete system: {exc}") from None
    res = float(np.max(np.abs(disc.apply(u_int, g_bnd) - f_int), initial=0.0))
    if not np.all(np.isfinite(u_int)) or res > 1e-8 * (np.max(np.abs(f_int), initial=0.0) + 1):
        raise ConvergenceError(f"direct solve residual {res:.3e} too large", residual=res)
    sup_u = float(np.max(np.abs(u_int), initial=0.0))
    sup_g = float(np.max(np.abs(g_bnd), initial=0.0))
    bound = {}
    mp_ok = True
    if check_bounds:
        if np.all(f_int >= 0):
            mp_ok = float(np.max(u_int, initial=-np.inf)) <= max(float(np.max(g_bnd)), 0.0) + 1e-9
        if np.all(f_int <= 0):
            mp_ok = mp_ok and float(np.min(u_int, initial=np.inf)) >= min(float(np.min(g_bnd)), 0.0) - 1e-9
        B = interior_sup_bound(L, f, g, domain, h=max(h, domain.diameter() / 100))
        bound = {"bound": B, "sup_u": sup_u, "ok": sup_u <= B + 1e-9, "sup_g": sup_g}
    report = SolveReport(res, 1, bool(mp_ok), bound)
    return DirectSolution(disc.to_grid(u_int, g_bnd), report, disc, u_int, g_bnd)


def comparison_sandwich(sol: DirectSolution, f, g, tol: float = 1e-6):
    """Discretely verified comparison pair and the worst sandwich violation."""
    disc = sol.disc
    f_int = disc.sample_interior(f)
    pair = build_comparison_pair(disc.L, f, g, disc.domain, h=max(disc.h, disc.domain.diameter() / 100),
                                 discrete_check=discrete_pair_check(disc, f_int, sol.g_bnd),
                                 boundary_points=disc.boundary_points)
    vp = disc.sample_interior(pair.v_plus)
    vm = disc.sample_interior(pair.v_minus)
    viol = float(max(np.max(sol.u_int - vp, initial=0.0), np.max(vm - sol.u_int, initial=0.0)))
    scale = max(1.0, float(np.max(np.abs(f_int), initial=0.0)))
    return pair, viol, viol <= tol * scale
