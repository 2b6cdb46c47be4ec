"""Scenario runner: ``ellipext run <scenario.json>``.

A scenario is a JSON file with ``"schema": 1`` describing an operator, a
domain, data fields and a task.  The runner executes the task, checks every
invariant that applies, writes artifacts plus a report and exits 0 only if
every check passed.  Validation problems exit with status 2, failed checks
with status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import extension as ext
from .elliptic_op import EllipticOperator
from .errors import EllipextError, ScenarioError
from .fields import DomainSpec, GridFunction, ScalarField, as_field, dumps, format_float, sup_norm
from .solver import (
    boundary_attainment_check,
    comparison_sandwich,
    direct_solve,
    evolve,
    perron_solve,
    resolvent_solve,
    semigroup_defect,
)
from .solver.discrete import Discretization
from .transform import build_flattening_map, pushforward_operator, verify_no_cross_terms

SCHEMA = 1
TASKS = ("extend", "solve", "perron", "resolvent", "evolve", "verify_all")
SCENARIO_DIR = Path(__file__).parent / "scenarios"

# which mathematical result each check exercises
ANCHORS = {
    "admissibility": "boundary conditions of the extension operator",
    "negative control": "boundary conditions of the extension operator",
    "reflection identities": "squeezed reflection map",
    "sup-norm ratio": "contractive extension operator",
    "seam C2 matching": "regularity of the extension operator",
    "cross-term elimination": "mixed-term eliminating boundary flattening",
    "solve residual": "unique solvability of the Dirichlet problem",
    "a priori sup bound": "interior sup estimate",
    "comparison sandwich": "comparison functions for the maximum principle",
    "discrete maximum principle": "weak maximum principle",
    "barrier sandwich": "barrier at an external sphere point",
    "barrier normalisation": "barrier at an external sphere point",
    "exact solution": "unique solvability of the Dirichlet problem",
    "perron vs direct": "Perron construction of the solution",
    "perron monotonicity": "harmonic lifting of subfunctions",
    "resolvent contraction": "dissipativity and resolvent estimate",
    "resolvent closed form": "dissipativity and resolvent estimate",
    "growth bound": "semigroup growth bound",
    "non-expansion": "contraction semigroup for omega <= 0",
    "semigroup property": "semigroup law",
    "eigenfunction decay": "semigroup growth bound",
    "task error": "precondition of the task",
}


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: Optional[float] = None
    detail: str = ""

    @property
    def anchor(self) -> str:
        return ANCHORS.get(self.name, self.name)

    def as_dict(self) -> dict:
        return {"name": self.name, "anchor": self.anchor, "passed": bool(self.passed), "value": float(self.value),
                "threshold": None if self.threshold is None else float(self.threshold), "detail": self.detail}


def _le(name, value, threshold, detail=""):
    return Check(name, bool(value <= threshold), float(value), float(threshold), detail)


# ---------------------------------------------------------------------------
# scenario parsing
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    task: str
    operator: EllipticOperator
    domain: DomainSpec
    domain_spec: dict
    data: dict
    h: float
    alpha: float
    tolerances: dict
    seed: int
    output: Optional[str]
    sections: dict
    path: Path
    atlas: Optional[tuple] = field(default=None, repr=False)

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return 1


class _Validator:
    def __init__(self, path: Path, text: str):
        self.path, self.text = path, text

    def fail(self, key: str, message: str):
        raise ScenarioError(f"{self.path}:{_line_of(self.text, key)}: `{key}`: {message}")


def _field_value(raw, dim: int, key: str, v: _Validator, base: Path):
    if isinstance(raw, dict):
        if "file" not in raw:
            v.fail(key, "object values must be {\"file\": \"grid.csv\"}")
        p = (base / raw["file"]).resolve()
        if not p.exists():
            v.fail(key, f"referenced file {raw['file']} does not exist")
        return GridFunction.from_csv(p).interpolant()
    if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
        v.fail(key, "expected a number, an expression string or {\"file\": ...}")
    try:
        f = as_field(raw, dim)
        f(np.full((1, dim), 0.25))
    except Exception as exc:  # parse errors from the expression layer
        v.fail(key, f"cannot parse {raw!r}: {exc}")
    return f


def _build_domain(cfg, v: _Validator):
    if not isinstance(cfg, dict) or "kind" not in cfg:
        v.fail("domain", "needs an object with a `kind`")
    kind = cfg["kind"]
    try:
        if kind == "interval":
            return DomainSpec.box([cfg["lower"]], [cfg["upper"]]), None
        if kind == "box":
            return DomainSpec.box(cfg["lower"], cfg["upper"]), None
        if kind == "ball":
            return DomainSpec.ball(cfg["center"], float(cfg["radius"])), None
        if kind == "half_cuboid":
            return DomainSpec.half_cuboid(float(cfg["R"]), int(cfg["dim"])), None
        if kind == "disk":
            center, rho = cfg.get("center", [0.0, 0.0]), float(cfg.get("radius", 1.0))
            return DomainSpec.ball(center, rho), (center, rho)
    except KeyError as exc:
        v.fail("domain", f"missing key {exc.args[0]!r} for kind {kind!r}")
    except EllipextError as exc:
        v.fail("domain", str(exc))
    v.fail("kind", f"unknown domain kind {kind!r}; use interval, box, ball, half_cuboid or disk")


def _build_operator(cfg, dim: int, domain: DomainSpec, v: _Validator, base: Path) -> EllipticOperator:
    if not isinstance(cfg, dict) or "a" not in cfg:
        v.fail("operator", "needs at least the coefficient matrix `a`")
    a = cfg["a"]
    if not isinstance(a, list):
        a = [[a]]
    if len(a) != dim or any(not isinstance(r, list) or len(r) != dim for r in a):
        v.fail("a", f"must be a {dim} x {dim} matrix")
    a = [[_field_value(x, dim, "a", v, base) for x in row] for row in a]
    b = cfg.get("b", [0.0] * dim)
    if not isinstance(b, list) and dim == 1:
        b = [b]
    if not isinstance(b, list) or len(b) != dim:
        v.fail("b", f"must have {dim} entries")
    b = [_field_value(x, dim, "b", v, base) for x in b]
    c = _field_value(cfg.get("c", 0.0), dim, "c", v, base)
    pts = np.concatenate([domain.sample_interior(200), domain.sample_boundary(50)])
    A = np.empty((len(pts), dim, dim))
    for i in range(dim):
        for j in range(dim):
            A[:, i, j] = 0.5 * (a[i][j](pts) + a[j][i](pts))
    smallest = float(np.linalg.eigvalsh(A)[:, 0].min())
    if not smallest > 0:
        v.fail("a", f"must be positive definite on the domain (smallest eigenvalue {smallest:.6g} <= 0)")
    lam, Lam = cfg.get("lambda"), cfg.get("Lambda")
    variable = not all(f.expr is not None and not f.expr.free_symbols for f in [*sum(a, []), *b, c])
    if variable and (lam is None or Lam is None):
        lam = smallest if lam is None else lam
        B = np.stack([bi(pts) * np.ones(len(pts)) for bi in b], axis=1)
        Lam = float(max(np.abs(A).max(), np.abs(B).max(), np.abs(c(pts)).max())) if Lam is None else Lam
    try:
        return EllipticOperator(a, b, c, lam=lam, Lambda=Lam)
    except EllipextError as exc:
        v.fail("lambda", str(exc))


def load_scenario(path, mesh: Optional[float] = None, seed: Optional[int] = None) -> Scenario:
    """Parse and validate a scenario file; errors carry ``file:line`` context."""
    path = Path(path)
    if not path.exists():
        bundled = SCENARIO_DIR / f"{path.name}.json" if path.suffix != ".json" else SCENARIO_DIR / path.name
        if not bundled.exists():
            raise ScenarioError(f"{path}: no such scenario file or bundled scenario")
        path = bundled
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    v = _Validator(path, text)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}:1: the scenario must be a JSON object")
    if raw.get("schema") != SCHEMA:
        v.fail("schema", f"expected {SCHEMA}, got {raw.get('schema')!r}")
    for key in ("name", "task", "domain", "operator"):
        if key not in raw:
            raise ScenarioError(f"{path}:1: missing required key `{key}`")
    task = raw["task"]
    if task not in TASKS:
        v.fail("task", f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    domain, atlas = _build_domain(raw["domain"], v)
    base = path.parent
    op = _build_operator(raw["operator"], domain.dim, domain, v, base)
    data = {}
    for key, val in raw.get("data", {}).items():
        data[key] = _field_value(val, domain.dim, key, v, base)
    h = float(mesh if mesh is not None else raw.get("mesh", {}).get("h", domain.diameter() / 40))
    if not h > 0:
        v.fail("h", "mesh spacing must be positive")
    alpha = float(raw.get("alpha", 0.5))
    if not 0 < alpha <= 1:
        v.fail("alpha", "must lie in (0, 1]")
    tasks = raw.get("verify_all", {}).get("tasks", []) if task == "verify_all" else [task]
    if task == "verify_all" and not tasks:
        v.fail("verify_all", "needs a non-empty `tasks` list")
    for t in tasks:
        if t not in TASKS[:-1]:
            v.fail("tasks", f"unknown task {t!r}")
        need = {"extend": ["u"], "solve": ["f", "g"], "perron": ["f", "g"], "resolvent": ["f"], "evolve": ["u0"]}[t]
        for key in need:
            if key not in data:
                v.fail("data", f"task {t} needs data field `{key}`")
        if t in ("resolvent",) and "mu" not in raw.get("resolvent", {}):
            v.fail("resolvent", "needs `mu`")
        if t == "evolve" and not {"dt", "T"} <= set(raw.get("evolve", {})):
            v.fail("evolve", "needs `dt` and `T`")
    sections = {k: raw.get(k, {}) for k in TASKS}
    sections["tasks"] = tasks
    return Scenario(raw["name"], task, op, domain, raw["domain"], data, h, alpha, raw.get("tolerances", {}),
                    int(seed if seed is not None else raw.get("seed", 0)), raw.get("output"), sections, path, atlas)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def _fd_reflection_error(a: float, b: float, h: float = 1e-4) -> float:
    F = lambda s: ext.reflection_function(a, b, s)  # noqa: E731
    d1 = (F(h) - F(-h)) / (2 * h)
    d2 = (F(h) - 2 * F(0.0) + F(-h)) / h**2
    return float(max(abs(F(0.0)), abs(d1 + 1), abs(d2 - 2 * b / a)))


def run_extend(sc: Scenario, artifacts: dict) -> list:
    L, dom, u = sc.operator, sc.domain, sc.data["u"]
    sec = sc.sections["extend"]
    negative = bool(sec.get("negative_control", False))
    seam_tol = sc.tol("seam", 1e-3)
    checks = []
    n = dom.dim
    if sc.atlas is not None:
        center, rho = sc.atlas
        omega, charts, etas = ext.disk_atlas(center, rho)
        part = ext.build_partition(etas, omega, seed=sc.seed)
        E = ext.extend_global(u, L, charts, part, omega, strict=not negative, seed=sc.seed)
        inner, outer = dom, DomainSpec.box(np.asarray(center) - 1.5 * rho, np.asarray(center) + 1.5 * rho)
        ang = np.linspace(0, 2 * np.pi, 13)[:-1] + 0.1
        seam = ext.Seam.circle(center, rho, ang)
    elif n == 1:
        lo, hi = float(dom.lower[0]), float(dom.upper[0])
        if lo != 0.0:
            raise ScenarioError("1D extension expects the interval to start at 0")
        A, B, _ = L.coefficients(np.zeros(1))
        a, b = float(A[0, 0]), float(B[0])
        err = max(_fd_reflection_error(a, b), _fd_reflection_error(L.lam, -L.Lambda),
                  _fd_reflection_error(L.lam, L.Lambda))
        checks.append(_le("reflection identities", err, sc.tol("reflection", 1e-6)))
        E = ext.extend_1d(u, a, b, hi, strict=not negative)
        inner, outer, seam = dom, DomainSpec.box([-hi], [hi]), ext.Seam.point_1d()
    else:
        if dom.kind != "half_cuboid":
            raise ScenarioError("extension in dimension >= 2 needs a half_cuboid or disk domain")
        R = float(dom.upper[0])
        rng = np.random.default_rng(sc.seed)
        bp = np.zeros((200, n))
        bp[:, :-1] = rng.uniform(-R, R, (200, n - 1))
        A, _, _ = L.coefficients(bp)
        cross = float(np.max(np.abs(A[:, :-1, -1])))
        tang = np.linspace(-0.8 * R, 0.8 * R, 7)
        tang = np.stack(np.meshgrid(*([tang] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)
        seam = ext.Seam.flat(tang, n)
        if cross > 1e-12:
            flat = build_flattening_map(L, R)
            F, Rp = flat.F, flat.R_prime
            L2 = pushforward_operator(L, F, sample_points=rng.uniform(-Rp, Rp, (200, n)) / math.sqrt(n))
            ybp = bp * (Rp / R) / math.sqrt(n)
            checks.append(_le("cross-term elimination", verify_no_cross_terms(L2, ybp), sc.tol("cross_terms", 1e-6)))
            Lu = L.apply_field(u)
            v = ScalarField(lambda y: u(F.inverse(y)), n)
            Ev = ext.extend_halfspace(v, L2, Rp / math.sqrt(n), strict=not negative,
                                      operator_residual=lambda y: np.abs(Lu(F.inverse(y))),
                                      boundary_samples=ybp, seed=sc.seed)
            E = ext.Extension(ScalarField(lambda p: Ev(F(p)), n), Ev.delta, Ev.residual, "flattened", {"R": Rp})
            half = 0.9 * Rp / math.sqrt(n)
            lo = np.full(n, -half)
            inner, outer = DomainSpec.box(np.where(np.arange(n) == n - 1, 0.0, lo), np.full(n, half)), \
                DomainSpec.box(lo, np.full(n, half))
            seam = ext.Seam.flat(tang * half / R, n)
        else:
            E = ext.extend_halfspace(u, L, R, strict=not negative, seed=sc.seed)
            inner, outer = dom, DomainSpec.box(-np.full(n, R), np.full(n, R))
    rep = ext.verify_extension_smoothness(E, seam, alpha=sc.alpha)
    if negative:
        checks.append(Check("negative control", rep.second_mismatch >= 0.1 * E.residual, rep.second_mismatch,
                            0.1 * E.residual, f"boundary residual {E.residual:.6g}"))
    else:
        checks.append(_le("admissibility", E.residual, sc.tol("admissibility", 1e-6)))
        h_sup = sc.h
        s_in = sup_norm(u, inner, h=h_sup, refine=5)
        s_out = sup_norm(E, outer, h=h_sup, refine=5)
        ratio = s_out / s_in
        checks.append(_le("sup-norm ratio", abs(ratio - 1.0), sc.tol("sup_ratio", 1e-6), f"ratio {ratio:.12f}"))
        checks.append(_le("seam C2 matching", rep.second_mismatch, seam_tol,
                          f"value {rep.value_mismatch:.3g}, first {rep.first_mismatch:.3g}"))
    artifacts["extension"] = GridFunction.sample(E, outer, sc.h, alpha=sc.alpha)
    return checks


def _boundary_probe_points(sc: Scenario, n: int = 4):
    pts = sc.sections["solve"].get("barrier_points")
    if pts is not None:
        return np.asarray(pts, dtype=float).reshape(-1, sc.domain.dim)
    dom = sc.domain
    if dom.kind == "ball":
        return dom.sample_boundary(n, np.random.default_rng(sc.seed))
    # face centres of the box
    mid = 0.5 * (dom.lower + dom.upper)
    out = []
    for ax in range(dom.dim):
        for side in (dom.lower[ax], dom.upper[ax]):
            p = mid.copy()
            p[ax] = side
            out.append(p)
    return np.asarray(out)


def run_solve(sc: Scenario, artifacts: dict) -> list:
    L, dom, f, g = sc.operator, sc.domain, sc.data["f"], sc.data["g"]
    sol = direct_solve(L, f, g, dom, sc.h)
    fnorm = float(np.max(np.abs(sol.disc.sample_interior(f)), initial=0.0))
    checks = [_le("solve residual", sol.report.residual_norm, 1e-8 * (fnorm + 1))]
    bc = sol.report.bound_check
    if bc:
        checks.append(_le("a priori sup bound", bc["sup_u"], bc["bound"]))
    if np.all(sol.disc.c_values <= 0):
        _, viol, _ = comparison_sandwich(sol, f, g)
        checks.append(_le("comparison sandwich", viol, sc.tol("sandwich", 1e-6)))
        if fnorm == 0.0:
            checks.append(Check("discrete maximum principle", bool(sol.report.max_principle_ok),
                                float(sol.report.max_principle_ok), 1.0))
        if dom.kind in ("box", "ball") and dom.dim >= 2 or dom.dim == 1:
            rep = boundary_attainment_check(sol, g, L, f, _boundary_probe_points(sc),
                                            epsilons=tuple(sc.sections["solve"].get("epsilons", (0.1, 0.01))))
            checks.append(_le("barrier sandwich", rep.worst_violation, sc.tol("barrier", 1e-6),
                              f"{len(rep.points)} points, {len(rep.skipped)} skipped"))
            checks.append(_le("barrier normalisation", max(rep.max_Lw + 1.0, rep.w_at_x0), 1e-6,
                              f"max Lw {rep.max_Lw:.6g}, |w(x0)| {rep.w_at_x0:.3g}"))
    if "exact" in sc.data:
        err = float(np.max(np.abs(sol.u_int - sc.data["exact"](sol.disc.interior_points)), initial=0.0))
        checks.append(_le("exact solution", err, sc.tol("exact", 1e-6)))
    artifacts["solution"] = sol.u
    return checks


def run_perron(sc: Scenario, artifacts: dict) -> list:
    L, dom, f, g = sc.operator, sc.domain, sc.data["f"], sc.data["g"]
    tol = sc.tol("sweep", 1e-6)
    disc = Discretization(L, dom, sc.h)
    direct = direct_solve(L, f, g, dom, sc.h, disc=disc)
    res = perron_solve(L, f, g, dom, sc.h, tol=tol, disc=disc)
    diff = float(np.max(np.abs(res.u.values - direct.u.values)))
    st = res.state
    checks = [
        _le("perron vs direct", diff, 10 * tol, f"{st.sweep_count} sweeps over {len(st.ball_cover)} balls"),
        Check("perron monotonicity", st.min_increment >= -1e-9, st.min_increment, -1e-9,
              "smallest lifting increment, must stay above the limit"),
    ]
    u_int = disc.from_grid(res.u)
    viol = float(max(np.max(res.v_minus - u_int, initial=0.0), np.max(u_int - res.v_plus, initial=0.0)))
    checks.append(_le("comparison sandwich", viol, sc.tol("sandwich", 1e-6)))
    artifacts["perron"] = res.u
    artifacts["direct"] = direct.u
    return checks


def run_resolvent(sc: Scenario, artifacts: dict) -> list:
    sec = sc.sections["resolvent"]
    mus = sec["mu"] if isinstance(sec["mu"], list) else [sec["mu"]]
    checks = []
    worst, last = -math.inf, None
    for mu in mus:
        r = resolvent_solve(sc.operator, float(mu), sc.data["f"], sc.domain, sc.h)
        worst = max(worst, r.sup_u * (float(mu) - r.omega) - r.sup_f)
        last = r
    checks.append(_le("resolvent contraction", worst, 1e-9, f"{len(mus)} values of mu"))
    if "expected_sup" in sec:
        checks.append(_le("resolvent closed form", abs(last.sup_u - float(sec["expected_sup"])),
                          sc.tol("closed_form", 1e-4), f"sup |u| = {last.sup_u:.10f}"))
    artifacts["resolvent"] = last.u
    return checks


def run_evolve(sc: Scenario, artifacts: dict) -> list:
    sec = sc.sections["evolve"]
    dt, T = float(sec["dt"]), float(sec["T"])
    tr = evolve(sc.operator, sc.data["u0"], dt, T, sc.domain, sc.h, store_every=1)
    checks = [_le("growth bound", tr.growth_violation(1.05), 1e-9, f"omega = {tr.omega:.6g}")]
    if tr.omega <= 0:
        steps = np.diff(tr.norms)
        checks.append(_le("non-expansion", float(np.max(steps, initial=0.0)), 1e-12))
    k = max(1, int(round(T / dt)) // 4)
    defect = semigroup_defect(sc.operator, sc.data["u0"], dt, k * dt, sc.domain, sc.h)
    checks.append(_le("semigroup property", defect, sc.tol("semigroup", 1e-9)))
    if "eigenvalue" in sec:
        k = len(tr.norms) - 1
        predicted = (1 + float(sec["eigenvalue"]) * dt) ** (-k) * tr.norms[0]
        rel = abs(tr.norms[-1] / predicted - 1)
        checks.append(_le("eigenfunction decay", rel, sc.tol("decay", 0.02)))
    every = int(sec.get("store_every", max(1, (len(tr.states) - 1) // 10)))
    keep = sorted(set(range(0, len(tr.states), every)) | {len(tr.states) - 1})
    artifacts["trajectory"] = ([tr.times[i] for i in keep], [tr.states[i] for i in keep],
                               [tr.norms[i] for i in keep])
    return checks


RUNNERS = {"extend": run_extend, "solve": run_solve, "perron": run_perron, "resolvent": run_resolvent,
           "evolve": run_evolve}


def run_checks(sc: Scenario):
    """Run the scenario's task(s): ``(checks, artifacts)``."""
    checks, artifacts = [], {}
    for task in sc.sections["tasks"]:
        try:
            checks.extend(RUNNERS[task](sc, artifacts))
        except (EllipextError, ValueError, RuntimeError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            checks.append(Check("task error", False, math.nan, None, f"{task}: {exc}"))
    return checks, artifacts


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def emit(results: dict, fmt: str, out) -> Path:
    """Write ``results`` as ``report.json`` or ``report.csv`` in ``out``."""
    if not results or not results.get("checks"):
        raise ValueError("no results to emit")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"cannot write to {out}: {exc}") from None
    if fmt == "json":
        path = out / "report.json"
        path.write_text(dumps(results) + "\n")
    elif fmt == "csv":
        path = out / "report.csv"
        cols = ["name", "anchor", "passed", "value", "threshold", "detail"]
        lines = [",".join(cols)]
        for c in results["checks"]:
            row = []
            for k in cols:
                v = c[k]
                if isinstance(v, bool):
                    row.append("true" if v else "false")
                elif isinstance(v, float):
                    row.append(format_float(v))
                elif v is None:
                    row.append("")
                else:
                    row.append('"' + str(v).replace('"', '""') + '"')
            lines.append(",".join(row))
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_results(path) -> dict:
    """Inverse of :func:`emit` (CSV reports give back only the checks)."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    checks = []
    for r in rows:
        checks.append({"name": r["name"], "anchor": r["anchor"], "passed": r["passed"] == "true",
                       "value": float(r["value"]) if r["value"] not in ("", "null") else math.nan,
                       "threshold": float(r["threshold"]) if r["threshold"] else None, "detail": r["detail"]})
    return {"checks": checks}


def _write_artifacts(artifacts: dict, out: Path) -> list:
    written = []
    for name in sorted(artifacts):
        obj = artifacts[name]
        if isinstance(obj, GridFunction):
            written.append(obj.to_csv(out / f"{name}.csv"))
        else:
            times, states, norms = obj
            d = out / name
            d.mkdir(parents=True, exist_ok=True)
            files = []
            for k, s in enumerate(states):
                files.append(s.to_csv(d / f"state_{k:05d}.csv").name)
            (d / "index.json").write_text(dumps({"times": times, "norms": norms, "files": files}) + "\n")
            written.append(d / "index.json")
    return written


def format_report(results: dict) -> str:
    lines = [f"scenario {results['scenario']} (task {results['task']}, h = {results['h']:.6g}, seed {results['seed']})"]
    for c in results["checks"]:
        thr = "" if c["threshold"] is None else f" (limit {c['threshold']:.3g})"
        detail = f"; {c['detail']}" if c["detail"] else ""
        lines.append(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['value']:.6g}{thr}"
                     f" [{c['anchor']}]{detail}")
    lines.append("all checks passed" if results["passed"] else f"first failure: {results['first_failure']}")
    return "\n".join(lines)


def run_scenario(path, out=None, mesh=None, seed=None, fmt: str = "json", stream=None) -> int:
    """Load, run and report; return the process exit status."""
    stream = sys.stdout if stream is None else stream
    sc = load_scenario(path, mesh=mesh, seed=seed)
    checks, artifacts = run_checks(sc)
    failed = [c for c in checks if not c.passed]
    results = {"scenario": sc.name, "task": sc.task, "h": sc.h, "seed": sc.seed, "alpha": sc.alpha,
               "checks": [c.as_dict() for c in checks], "passed": not failed,
               "first_failure": failed[0].name if failed else None}
    out = Path(out or sc.output or Path("ellipext_out") / sc.name)
    emit(results, fmt, out)
    _write_artifacts(artifacts, out)
    report = format_report(results)
    (out / "report.txt").write_text(report + "\n")
    print(report, file=stream)
    if failed:
        print(f"FAILED: first failing check `{failed[0].name}`", file=sys.stderr)
        return 1
    return 0


def list_scenarios() -> list:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ellipext", description="Run extension and solver scenarios.")
    parser.add_argument("--list-scenarios", action="store_true", help="list bundled scenarios and exit")
    sub = parser.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run a scenario file or bundled scenario name")
    run.add_argument("scenario")
    run.add_argument("--out", help="output directory")
    run.add_argument("--mesh", type=float, help="override the mesh spacing h")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--format", choices=("csv", "json"), default="json", dest="fmt")
    run.add_argument("--list-scenarios", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    if args.list_scenarios:
        for name in list_scenarios():
            print(name)
        return 0
    if args.command != "run":
        parser.print_usage(sys.stderr)
        return 2
    try:
        status = run_scenario(args.scenario, args.out, args.mesh, args.seed, args.fmt)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
