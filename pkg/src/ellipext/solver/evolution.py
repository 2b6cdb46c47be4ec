"""Resolvent solves ``(L - mu) u = f`` and implicit-Euler time stepping for
``u' = Lu`` with zero Dirichlet data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from ..elliptic_op import EllipticOperator
from ..errors import DomainError, ParameterError
from ..fields import DomainSpec, GridFunction, as_field
from .discrete import Discretization


@dataclass
class ResolventResult:
    u: GridFunction
    contraction_ok: bool
    omega: float
    sup_u: float
    sup_f: float
    u_int: np.ndarray = field(repr=False, default=None)


def _omega(L: EllipticOperator, disc: Discretization, omega: Optional[float]) -> float:
    if omega is not None:
        return float(omega)
    return max(L.omega(disc.domain, disc.h), float(np.max(disc.c_values, initial=-math.inf)))


def resolvent_solve(L: EllipticOperator, mu: float, f, domain: DomainSpec, h: float,
                    omega: Optional[float] = None, disc: Optional[Discretization] = None) -> ResolventResult:
    """Solve ``(L - mu) u = f`` with ``u = 0`` on the boundary; needs ``mu > omega``.

    ``contraction_ok`` records ``||u|| (mu - omega) <= ||f|| + 1e-9``.
    """
    disc = Discretization(L, domain, h) if disc is None else disc
    om = _omega(L, disc, omega)
    if not mu > om:
        raise ParameterError(f"mu = {mu} must exceed omega = {om:.6g}")
    f_int = disc.sample_interior(f)
    A = disc.A - mu * sps.identity(disc.n_unknowns, format="csr")
    u_int = disc.solve(f_int, A)
    sup_u = float(np.max(np.abs(u_int), initial=0.0))
    sup_f = float(np.max(np.abs(f_int), initial=0.0))
    ok = sup_u * (mu - om) <= sup_f + 1e-9
    return ResolventResult(disc.to_grid(u_int, np.zeros(len(disc.boundary_points))), bool(ok), om, sup_u, sup_f, u_int)


@dataclass
class Trajectory:
    times: list
    states: list
    omega: float
    norms: list

    def growth_violation(self, factor: float = 1.0) -> float:
        """Worst ``||u(t)|| - e^{factor omega t} ||u0||`` (non-positive when the bound holds)."""
        n0 = self.norms[0]
        return float(max(n - math.exp(factor * self.omega * t) * n0 for t, n in zip(self.times, self.norms)))


def evolve(L: EllipticOperator, u0, dt: float, T: float, domain: DomainSpec, h: float,
           omega: Optional[float] = None, store_every: int = 1, disc: Optional[Discretization] = None) -> Trajectory:
    """Implicit Euler ``(I - dt L) u_{k+1} = u_k`` with zero boundary values.

    Each step is a resolvent solve with ``mu = 1/dt``, prefactorised once.
    States are kept every ``store_every`` steps (always the first and last).
    """
    if not dt > 0 or not T >= 0:
        raise ParameterError("dt must be positive and T non-negative")
    disc = Discretization(L, domain, h) if disc is None else disc
    om = _omega(L, disc, omega)
    mu = 1.0 / dt
    if not mu > om:
        raise ParameterError(f"1/dt = {mu:.6g} must exceed omega = {om:.6g}")
    if isinstance(u0, GridFunction):
        u = disc.from_grid(u0)
        bnd = u0.values[u0.domain_mask() & ~disc.interior_mask] if u0.shape == tuple(disc.shape) else np.zeros(1)
    else:
        u = disc.sample_interior(u0)
        bnd = disc.sample_boundary(u0)
    if np.max(np.abs(bnd), initial=0.0) > 1e-9:
        raise DomainError("u0 must vanish on the boundary")
    lu = spla.splu((disc.A - mu * sps.identity(disc.n_unknowns, format="csr")).tocsc())
    steps = int(round(T / dt))
    zeros = np.zeros(len(disc.boundary_points))
    times, states, norms = [0.0], [disc.to_grid(u, zeros)], [float(np.max(np.abs(u), initial=0.0))]
    for k in range(1, steps + 1):
        u = lu.solve(-mu * u)
        if k % store_every == 0 or k == steps:
            times.append(k * dt)
            states.append(disc.to_grid(u, zeros))
            norms.append(float(np.max(np.abs(u), initial=0.0)))
    return Trajectory(times, states, om, norms)


def semigroup_defect(L: EllipticOperator, u0, dt: float, t: float, domain: DomainSpec, h: float) -> float:
    """``max |S(2t) u0 - S(t) S(t) u0|`` for the implicit-Euler propagator.

    ``t`` must be a whole number of steps.
    """
    if abs(t / dt - round(t / dt)) > 1e-9 * max(1.0, t / dt):
        raise ParameterError("t must be a multiple of dt")
    disc = Discretization(L, domain, h)
    whole = evolve(L, u0, dt, 2 * t, domain, h, disc=disc, store_every=10**9)
    half = evolve(L, u0, dt, t, domain, h, disc=disc, store_every=10**9)
    again = evolve(L, half.states[-1], dt, t, domain, h, disc=disc, store_every=10**9)
    return float(np.max(np.abs(whole.states[-1].values - again.states[-1].values)))
