"""Manufactured solutions, convergence studies and numerical theorem checks."""
from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConvergenceError, OcpFemError
from .fem import (
    CoefficientSet,
    ExactField,
    P0Field,
    P1Field,
    assemble_bilinear,
    bilinear_load,
    constant,
    error_norms,
    l2_project_p0,
    p0_l2_difference,
    poincare_constant,
)
from .mesh import Mesh, mesh_size, unit_square_mesh
from .multiscale import build_lod, lod_ocp_solve, lod_solve
from .ocp import (
    ControlSpace,
    KktSolution,
    OcpProblem,
    StateSpace,
    apriori_bounds,
    pdas,
    solve_ocp,
)

log = logging.getLogger(__name__)

PI = math.pi

CSV_COLUMNS = (
    "h", "rho", "err_y_l2", "err_u_l2", "err_p_l2", "err_y_a", "err_p_a",
    "thm41_ratio", "thm43_ratio", "iters",
)
ERROR_COLUMNS = ("err_y_l2", "err_u_l2", "err_p_l2", "err_y_a", "err_p_a")


# --------------------------------------------------------------------------
# rates


def fit_rate(rows: Sequence[tuple]) -> float:
    """Least-squares slope of ``log e`` against ``log h``."""
    if len(rows) < 2:
        raise OcpFemError("fit_rate needs at least two (h, e) rows")
    h = np.array([r[0] for r in rows], dtype=float)
    e = np.array([r[1] for r in rows], dtype=float)
    if (e <= 0).any() or (h <= 0).any() or not np.isfinite(e).all():
        raise OcpFemError("fit_rate needs positive errors and mesh sizes")
    slope = np.polyfit(np.log(h), np.log(e), 1)[0]
    return float(0.0 if abs(slope) < 1e-14 else slope)


def pairwise_rates(rows: Sequence[tuple]) -> list:
    """``log2(e_k / e_{k+1})`` for consecutive rows whose mesh size halves."""
    out = []
    for (h0, e0), (h1, e1) in zip(rows, rows[1:]):
        if abs(h0 / h1 - 2.0) < 1e-8 and e0 > 0 and e1 > 0:
            out.append(math.log2(e0 / e1))
        else:
            out.append(float("nan"))
    return out


def spread(values: Sequence[float]) -> float:
    """max / median of positive values."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0 or (v <= 0).any():
        return float("nan")
    return float(v.max() / np.median(v))


# --------------------------------------------------------------------------
# manufactured problems


def _sin2(x):
    x = np.asarray(x, dtype=float)
    return np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])


def _sin2_grad(x):
    x = np.asarray(x, dtype=float)
    a, b = PI * x[..., 0], PI * x[..., 1]
    return np.stack([PI * np.cos(a) * np.sin(b), PI * np.sin(a) * np.cos(b)], axis=-1)


def _sin2_lap(x):
    return -2.0 * PI**2 * _sin2(x)


SIN2 = ExactField(_sin2, _sin2_grad, _sin2_lap)


@dataclass(frozen=True)
class ManufacturedProblem:
    """Problem data together with the exact optimal state, control, adjoint and multiplier."""

    prob: OcpProblem
    exact_y: object
    exact_u: object
    exact_p: object
    exact_lam: object
    name: str = "custom"

    @property
    def gamma(self) -> float:
        return self.prob.gamma

    @property
    def lam1(self):
        lam = self.exact_lam
        return _part(lam, np.maximum)

    @property
    def lam2(self):
        lam = self.exact_lam
        return _part(lam, np.minimum)

    def self_check(self, n_points: int = 200, seed: int = 42, kkt_tol: float = 1e-12,
                   pde_tol: float = 1e-8) -> dict:
        """Check the optimality system pointwise at random interior points.

        The PDE residuals need Laplacians of the exact state and adjoint and
        assume ``A = I``, ``c = 0``; they are skipped otherwise.
        """
        rng = np.random.default_rng(seed)
        x = rng.uniform(1e-3, 1 - 1e-3, size=(n_points, 2))
        g = self.gamma
        y, u, p = self.exact_y(x), self.exact_u(x), self.exact_p(x)
        clamp = np.maximum(self.prob.phi1(x), np.minimum(self.prob.phi2(x), -p / g))
        out = {
            "kkt": float(np.max(np.abs(u - clamp))),
            "multiplier": float(np.max(np.abs(self.exact_lam(x) - (p + g * u)))),
        }
        lap_y = getattr(self.exact_y, "laplacian", None)
        lap_p = getattr(self.exact_p, "laplacian", None)
        if self.prob.coeff.name == "identity" and lap_y is not None and lap_p is not None:
            out["state_pde"] = float(np.max(np.abs(self.prob.f(x) - (-lap_y(x) - u))))
            out["adjoint_pde"] = float(np.max(np.abs(self.prob.y_d(x) - (y + lap_p(x)))))
        t = np.linspace(0.0, 1.0, 41)
        edge = np.concatenate([np.c_[t, 0 * t], np.c_[t, 1 + 0 * t], np.c_[0 * t, t], np.c_[1 + 0 * t, t]])
        out["boundary"] = float(max(np.max(np.abs(self.exact_y(edge))), np.max(np.abs(self.exact_p(edge)))))
        bad = [k for k, v in out.items()
               if v > (kkt_tol if k in ("kkt", "multiplier", "boundary") else pde_tol)]
        if bad:
            raise OcpFemError(f"manufactured problem is inconsistent: {', '.join(bad)} ({out})")
        return out


def _part(f, op):
    if isinstance(f, ExactField):
        def value(x):
            return op(f(x), 0.0)

        def grad(x):
            return np.where((op(f(x), 0.0) != 0.0)[:, None], f.grad(x), 0.0)

        return ExactField(value, grad)
    return lambda x: op(f(x), 0.0)


def manufacture_m1(gamma: float = 1.0, bound: float = 0.5,
                   coeff: Optional[CoefficientSet] = None) -> ManufacturedProblem:
    """Exact solution ``y = p = sin(pi x1) sin(pi x2)`` on the unit square.

    With ``coeff`` other than the identity the data ``f``, ``y_d`` are still
    built from the Laplacian formulas, so the exact fields are no longer the
    optimum; such problems are only meaningful against a fine reference.
    """
    if not (0.0 < gamma <= 1.0):
        raise OcpFemError(f"gamma must be in (0,1], got {gamma}")
    if bound <= 0:
        raise OcpFemError("bound must be positive")
    g, b = float(gamma), float(bound)

    def u_val(x):
        return np.clip(-_sin2(x) / g, -b, b)

    def u_grad(x):
        free = (np.abs(_sin2(x) / g) < b)[:, None]
        return np.where(free, -_sin2_grad(x) / g, 0.0)

    exact_u = ExactField(u_val, u_grad)
    exact_lam = ExactField(lambda x: _sin2(x) + g * u_val(x),
                           lambda x: _sin2_grad(x) + g * u_grad(x))
    prob = OcpProblem(
        coeff=coeff or CoefficientSet.identity(),
        gamma=g,
        # -lap y - u = f and -lap p = y - y_d with y = p = sin sin
        f=lambda x: 2 * PI**2 * _sin2(x) - u_val(x),
        y_d=lambda x: _sin2(x) - 2 * PI**2 * _sin2(x),
        phi1=constant(-b),
        phi2=constant(b),
    )
    return ManufacturedProblem(prob, SIN2, exact_u, SIN2, exact_lam, name="M1")


def discrete_coincidence(n: int = 8, gamma: float = 1.0) -> tuple:
    """Degenerate problem whose exact solution lies in the discrete spaces.

    Bounds are ``+-1e6`` (never active) and the exact fields are the
    variational-control solution on ``unit_square_mesh(n)`` itself, so both
    sides of the error theorems vanish up to round-off.  Returns the
    manufactured problem and the mesh.
    """
    base = manufacture_m1(gamma, 1e6)
    m = unit_square_mesh(n)
    sol = solve_ocp(base.prob, m, "variational", tol=1e-13)
    u = P1Field(m, -sol.p.values / gamma)
    mp = ManufacturedProblem(base.prob, sol.y, u, sol.p, constant(0.0), name="coincidence")
    return mp, m


# --------------------------------------------------------------------------
# projections and theorem checks


@dataclass(frozen=True)
class Projections:
    """Projection errors of the exact solution into the discrete spaces."""

    y_ritz_l2: float
    p_ritz_l2: float
    y_ritz_a: float
    p_ritz_a: float
    lam1_q: float
    lam2_q: float
    phi1_q: float
    phi2_q: float
    u_q: float

    @property
    def q_terms(self) -> float:
        return self.lam1_q + self.lam2_q + self.phi1_q + self.phi2_q + self.u_q


def ritz_projection(V: StateSpace, coeff: CoefficientSet, zeta) -> P1Field:
    """``a(R zeta, v) = a(zeta, v)`` for all ``v`` in the state space ``V``."""
    return V.field(V.solve(V.basis.T @ bilinear_load(V.mesh, coeff, zeta)))


def _q_error(W: ControlSpace, f) -> float:
    if W.kind != "p0":
        return 0.0  # the variational control space is not discretized
    return error_norms(W.mesh, None, l2_project_p0(W.mesh, f), f, energy=False)[0]


def compute_projections(mp: ManufacturedProblem, sol: KktSolution) -> Projections:
    V, W, coeff = sol.state_space, sol.control_space, mp.prob.coeff
    ry = ritz_projection(V, coeff, mp.exact_y)
    rp = ritz_projection(V, coeff, mp.exact_p)
    ey = error_norms(V.mesh, coeff, ry, mp.exact_y)
    ep = error_norms(V.mesh, coeff, rp, mp.exact_p)
    return Projections(
        y_ritz_l2=ey[0], p_ritz_l2=ep[0], y_ritz_a=ey[1], p_ritz_a=ep[1],
        lam1_q=_q_error(W, mp.lam1), lam2_q=_q_error(W, mp.lam2),
        phi1_q=_q_error(W, mp.prob.phi1), phi2_q=_q_error(W, mp.prob.phi2),
        u_q=_q_error(W, mp.exact_u),
    )


@dataclass(frozen=True)
class SolutionErrors:
    y_l2: float
    u_l2: float
    p_l2: float
    y_a: float
    p_a: float


def solution_errors(mp: ManufacturedProblem, sol: KktSolution) -> SolutionErrors:
    V, W, coeff = sol.state_space, sol.control_space, mp.prob.coeff
    y_l2, y_a = error_norms(V.mesh, coeff, sol.y, mp.exact_y)
    p_l2, p_a = error_norms(V.mesh, coeff, sol.p, mp.exact_p)
    u_l2 = error_norms(W.mesh, None, sol.u, mp.exact_u, energy=False)[0]
    return SolutionErrors(y_l2, u_l2, p_l2, y_a, p_a)


def _ratio(lhs: float, rhs: float, tol: float) -> float:
    if rhs <= tol:
        if lhs > tol:
            raise OcpFemError(f"inconsistent estimate: rhs {rhs:.3e} vanishes but lhs is {lhs:.3e}")
        return float("nan")
    return lhs / rhs


def check_theorem_41(mp: ManufacturedProblem, sol: KktSolution, proj: Projections,
                     errors: Optional[SolutionErrors] = None, tol: float = 1e-10) -> tuple:
    """L2 estimate: ``(lhs, rhs, lhs / rhs)``; the ratio is NaN if both sides vanish."""
    e = errors or solution_errors(mp, sol)
    lhs = e.y_l2 + e.u_l2 + e.p_l2
    rhs = proj.y_ritz_l2 + proj.p_ritz_l2 + proj.q_terms
    return lhs, rhs, _ratio(lhs, rhs, tol)


def check_tight(mp: ManufacturedProblem, sol: KktSolution, proj: Projections,
                errors: Optional[SolutionErrors] = None, tol: float = 1e-10) -> tuple:
    """Converse estimate: Ritz errors bounded by the total L2 error."""
    e = errors or solution_errors(mp, sol)
    lhs = proj.y_ritz_l2 + proj.p_ritz_l2
    rhs = e.y_l2 + e.u_l2 + e.p_l2
    return lhs, rhs, _ratio(lhs, rhs, tol)


def check_theorem_43(mp: ManufacturedProblem, sol: KktSolution, proj: Projections,
                     errors: Optional[SolutionErrors] = None, tol: float = 1e-10) -> tuple:
    """Energy estimate: ``(lhs, rhs, lhs / rhs)``."""
    e = errors or solution_errors(mp, sol)
    lhs = e.y_a + e.p_a
    rhs = proj.y_ritz_a + proj.p_ritz_a + proj.q_terms
    return lhs, rhs, _ratio(lhs, rhs, tol)


# --------------------------------------------------------------------------
# per-level invariants


def kkt_diagnostics(prob: OcpProblem, sol: KktSolution) -> dict:
    """Complementarity, feasibility and multiplier consistency of a discrete solution."""
    V, W = sol.state_space, sol.control_space
    lo, hi = W.project(prob.phi1), W.project(prob.phi2)
    u, lam = sol.u.values, sol.lam.values
    B = V.basis.T @ W.coupling
    Pp = (B.T @ sol.p_coeffs) / W.weights
    return {
        "complementarity": float(max(abs(sol.complementarity[0]), abs(sol.complementarity[1]))),
        "feasibility": float(max(0.0, np.max(lo - u), np.max(u - hi))),
        "multiplier": float(np.max(np.abs(lam - (Pp + prob.gamma * u)))),
        "sign": float(max(0.0, -np.min(sol.lam1.values), np.max(sol.lam2.values))),
        "iterations": sol.iterations,
    }


def kkt_ok(diag: dict) -> bool:
    return (diag["complementarity"] <= 1e-9 and diag["feasibility"] <= 1e-12
            and diag["multiplier"] <= 1e-10 and diag["sign"] == 0.0 and diag["iterations"] <= 30)


def stability_check(V: StateSpace, data_mesh: Mesh, alpha: float, c_pf: float,
                    rng: np.random.Generator, samples: int = 10) -> dict:
    """Solve ``a(v, w) = (g, w)`` for random P0 data ``g`` and compare with the stability bounds."""
    W = ControlSpace.p0(V.mesh, data_mesh)
    B = V.basis.T @ W.coupling
    l2_ratio, a_ratio, violations = 0.0, 0.0, 0
    for _ in range(samples):
        g = rng.standard_normal(data_mesh.n_cells)
        v = V.solve(B @ g)
        gn = W.norm(g)
        vl2 = math.sqrt(max(v @ (V.mass @ v), 0.0))
        va = math.sqrt(max(v @ (V.stiffness @ v), 0.0))
        b_l2 = c_pf**2 / alpha * gn
        b_a = c_pf / math.sqrt(alpha) * gn
        violations += int(vl2 > b_l2) + int(va > b_a)
        l2_ratio = max(l2_ratio, vl2 / b_l2)
        a_ratio = max(a_ratio, va / b_a)
    return {"violations": violations, "max_l2_ratio": l2_ratio, "max_energy_ratio": a_ratio,
            "samples": samples}


# --------------------------------------------------------------------------
# studies


@dataclass
class StudyLevel:
    n: int
    n_control: int
    h: float
    rho: float
    err_y_l2: float = float("nan")
    err_u_l2: float = float("nan")
    err_p_l2: float = float("nan")
    err_y_a: float = float("nan")
    err_p_a: float = float("nan")
    thm41_lhs: float = float("nan")
    thm41_rhs: float = float("nan")
    thm43_lhs: float = float("nan")
    thm43_rhs: float = float("nan")
    tight_lhs: float = float("nan")
    tight_rhs: float = float("nan")
    iters: int = -1
    kkt_residual: float = float("nan")
    kkt: dict = field(default_factory=dict)
    stability: dict = field(default_factory=dict)
    c_pf: float = float("nan")
    misfit: float = float("nan")
    c_sharp: float = float("nan")
    failed: bool = False
    message: str = ""
    residual_history: list = field(default_factory=list)

    @property
    def thm41_ratio(self) -> float:
        return self.thm41_lhs / self.thm41_rhs

    @property
    def thm43_ratio(self) -> float:
        return self.thm43_lhs / self.thm43_rhs

    @property
    def tight_ratio(self) -> float:
        return self.tight_lhs / self.tight_rhs

    @property
    def apriori_ok(self) -> bool:
        return bool(self.misfit <= self.c_sharp)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12e}"


@dataclass
class ConvergenceTable:
    mode: str
    levels: list

    @property
    def ok_levels(self) -> list:
        return [lv for lv in self.levels if not lv.failed]

    @property
    def failed(self) -> bool:
        return any(lv.failed for lv in self.levels)

    def column(self, name: str) -> list:
        return [(lv.h, getattr(lv, name)) for lv in self.ok_levels]

    def rate(self, name: str) -> float:
        return fit_rate(self.column(name))

    @property
    def rates(self) -> dict:
        out = {}
        for name in ERROR_COLUMNS:
            try:
                out[name] = self.rate(name)
            except OcpFemError:
                out[name] = float("nan")
        return out

    @property
    def pairwise(self) -> dict:
        return {name: pairwise_rates(self.column(name)) for name in ERROR_COLUMNS}

    @property
    def spreads(self) -> dict:
        lv = self.ok_levels
        return {
            "thm41": spread([x.thm41_ratio for x in lv]),
            "thm43": spread([x.thm43_ratio for x in lv]),
            "tight": spread([x.tight_ratio for x in lv]),
        }

    @property
    def kkt_ok(self) -> bool:
        return all(kkt_ok(lv.kkt) for lv in self.ok_levels)

    @property
    def stability_violations(self) -> int:
        return sum(lv.stability.get("violations", 0) for lv in self.ok_levels)

    @property
    def apriori_ok(self) -> bool:
        return all(lv.apriori_ok for lv in self.ok_levels)

    def to_csv(self, header: Optional[dict] = None) -> str:
        buf = io.StringIO()
        for k, v in (header or {}).items():
            buf.write(f"# {k} = {v}\n")
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for lv in self.levels:
            vals = [lv.h, lv.rho, lv.err_y_l2, lv.err_u_l2, lv.err_p_l2, lv.err_y_a, lv.err_p_a,
                    lv.thm41_ratio, lv.thm43_ratio, lv.iters]
            buf.write(",".join(_fmt(v) for v in vals) + "\n")
        for name, r in self.rates.items():
            buf.write(f"# rate {name} = {r:.4f}\n")
        for name, s in self.spreads.items():
            buf.write(f"# spread {name} = {s:.4f}\n")
        if self.failed:
            buf.write(f"# failed levels = {[lv.n for lv in self.levels if lv.failed]}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "levels": [lv.n for lv in self.levels],
            "control_levels": [lv.n_control for lv in self.levels],
            "rates": self.rates,
            "pairwise_rates": self.pairwise,
            "ratio_spreads": self.spreads,
            "kkt_ok": self.kkt_ok,
            "stability_violations": self.stability_violations,
            "apriori_ok": self.apriori_ok,
            "failed": [lv.n for lv in self.levels if lv.failed],
            "iterations": [lv.iters for lv in self.levels],
        }

    def to_json(self, header: Optional[dict] = None) -> str:
        d = {"config": header or {}, **self.summary()}
        return json.dumps(d, indent=2, sort_keys=True, default=float)


def control_sizes(schedule: Sequence[int], rule: Union[str, int, Sequence[int]]) -> list:
    """Control-mesh resolution per level.

    ``"same"`` uses the state mesh, ``"h-squared"`` takes ``n**2 / n0`` so
    that ``rho`` shrinks like ``h**2`` relative to the first level, an integer
    fixes the control mesh, and a sequence is used verbatim.
    """
    if isinstance(rule, str):
        if rule == "same":
            return list(schedule)
        if rule == "h-squared":
            n0 = schedule[0]
            return [n * n // n0 for n in schedule]
        raise OcpFemError(f"unknown control rule {rule!r}")
    if isinstance(rule, (int, np.integer)):
        return [int(rule)] * len(schedule)
    out = [int(k) for k in rule]
    if len(out) != len(schedule):
        raise OcpFemError("control schedule length differs from mesh schedule")
    return out


def _validate_schedule(schedule: Sequence[int]) -> list:
    s = [int(n) for n in schedule]
    if not s:
        raise OcpFemError("mesh schedule is empty")
    if any(b <= a for a, b in zip(s, s[1:])) or s[0] < 1:
        raise OcpFemError("mesh schedule must be strictly increasing positive integers")
    return s


def run_study(mp: ManufacturedProblem, mode: str, mesh_schedule: Sequence[int],
              control_schedule: Union[str, int, Sequence[int]] = "same", *, tol: float = 1e-10,
              max_iter: int = 50, seed: int = 42, stability_samples: int = 10,
              fine_n: int = 128, layers: Optional[int] = None, c_loc: float = 1.0,
              threads: Optional[int] = None) -> ConvergenceTable:
    """Solve ``mp`` on each level and collect errors, theorem ratios and invariants.

    ``mode`` is ``"p0-control"``, ``"variational"`` or ``"lod"``.  In LOD mode
    the schedule lists coarse resolutions over a ``fine_n`` fine mesh and the
    controls live on the coarse (or ``control_schedule``) mesh.
    """
    if mode not in ("p0-control", "variational", "lod"):
        raise OcpFemError(f"unknown study mode {mode!r}")
    schedule = _validate_schedule(mesh_schedule)
    controls = control_sizes(schedule, control_schedule) if mode != "variational" else list(schedule)
    prob, coeff = mp.prob, mp.prob.coeff
    levels = []
    fine = fine_system = fine_cpf = None
    if mode == "lod":
        fine = unit_square_mesh(fine_n)
        fine_system = assemble_bilinear(fine, coeff)
        fine_cpf = poincare_constant(fine)
    for k, (n, nc) in enumerate(zip(schedule, controls)):
        mesh = unit_square_mesh(n)
        if mode == "lod":
            if fine_n % n:
                raise OcpFemError(f"fine_n={fine_n} is not a refinement of coarse n={n}")
            space = build_lod(mesh, fine, coeff, layers=layers, c_loc=c_loc, threads=threads,
                              system=fine_system)
            V = space.state_space
            c_pf = fine_cpf
        else:
            V = StateSpace.p1(mesh, coeff)
            c_pf = poincare_constant(mesh)
        if mode == "variational":
            W = ControlSpace.variational(V.mesh)
            rho = 0.0
            data_mesh = mesh
        else:
            cmesh = mesh if nc == n else unit_square_mesh(nc)
            W = ControlSpace.p0(V.mesh, cmesh)
            rho = mesh_size(cmesh)
            data_mesh = cmesh
        lv = StudyLevel(n=n, n_control=nc, h=mesh_size(mesh), rho=rho, c_pf=c_pf)
        rng = np.random.default_rng([seed, k])
        lv.stability = stability_check(V, data_mesh, coeff.alpha, c_pf, rng, stability_samples)
        try:
            sol = pdas(prob, V, W, max_iter=max_iter, tol=tol)
        except ConvergenceError as exc:
            lv.failed, lv.message, lv.residual_history = True, str(exc), list(exc.history)
            log.warning("level n=%d failed: %s", n, exc)
            levels.append(lv)
            continue
        e = solution_errors(mp, sol)
        proj = compute_projections(mp, sol)
        lv.err_y_l2, lv.err_u_l2, lv.err_p_l2, lv.err_y_a, lv.err_p_a = (
            e.y_l2, e.u_l2, e.p_l2, e.y_a, e.p_a)
        lv.thm41_lhs, lv.thm41_rhs, _ = check_theorem_41(mp, sol, proj, e)
        lv.thm43_lhs, lv.thm43_rhs, _ = check_theorem_43(mp, sol, proj, e)
        lv.tight_lhs, lv.tight_rhs, _ = check_tight(mp, sol, proj, e)
        lv.iters, lv.kkt_residual = sol.iterations, sol.kkt_residual
        lv.residual_history = list(sol.residual_history)
        lv.kkt = kkt_diagnostics(prob, sol)
        lv.misfit = error_norms(V.mesh, None, sol.y, prob.y_d, energy=False)[0]
        lv.c_sharp = apriori_bounds(prob, c_pf, coeff.alpha, V.mesh).c_sharp
        log.info("level n=%d: u err %.3e, iters %d", n, lv.err_u_l2, lv.iters)
        levels.append(lv)
    return ConvergenceTable(mode=mode, levels=levels)


# --------------------------------------------------------------------------
# LOD studies against a fine reference


@dataclass
class LodLevel:
    n: int
    H: float
    layers: int
    err_a: float
    err_l2: float


@dataclass
class LodTable:
    levels: list
    extra: dict = field(default_factory=dict)

    def rate(self, name: str) -> float:
        return fit_rate([(lv.H, getattr(lv, name)) for lv in self.levels])

    def to_csv(self, header: Optional[dict] = None) -> str:
        buf = io.StringIO()
        for k, v in (header or {}).items():
            buf.write(f"# {k} = {v}\n")
        names = [f.name for f in self.levels[0].__dataclass_fields__.values()] if self.levels else []
        buf.write(",".join(names) + "\n")
        for lv in self.levels:
            buf.write(",".join(_fmt(getattr(lv, k)) for k in names) + "\n")
        for k in [k for k in names if k.startswith("err")]:
            buf.write(f"# rate {k} = {self.rate(k):.4f}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        names = [f for f in self.levels[0].__dataclass_fields__ if f.startswith("err")] if self.levels else []
        return {"levels": [asdict(lv) for lv in self.levels],
                "rates": {k: self.rate(k) for k in names}, **self.extra}


def lod_source_study(coeff: CoefficientSet, coarse_schedule: Sequence[int], fine_n: int = 128,
                     g=None, layers: Optional[int] = None, c_loc: float = 1.0,
                     threads: Optional[int] = None) -> LodTable:
    """LOD Galerkin error for ``-div(A grad v) = g`` (default ``g = 1``) against the fine P1 solution."""
    schedule = _validate_schedule(coarse_schedule)
    g = constant(1.0) if g is None else g
    fine = unit_square_mesh(fine_n)
    system = assemble_bilinear(fine, coeff)
    ref = StateSpace.p1(fine, coeff, system=system)
    v_ref = ref.basis @ ref.solve(ref.load(g))
    M = ref.mass_full
    levels = []
    for n in schedule:
        coarse = unit_square_mesh(n)
        space = build_lod(coarse, fine, coeff, layers=layers, c_loc=c_loc, threads=threads,
                          system=system)
        d = lod_solve(space, g).values - v_ref
        levels.append(LodLevel(n=n, H=mesh_size(coarse), layers=space.layers,
                               err_a=math.sqrt(d @ (system.full @ d)), err_l2=math.sqrt(d @ (M @ d))))
    return LodTable(levels)


@dataclass
class LodOcpLevel:
    n: int
    H: float
    layers: int
    err_u_l2: float
    err_y_l2: float
    err_p_l2: float
    err_y_a: float
    err_p_a: float
    iters: int
    misfit: float = float("nan")
    c_sharp: float = float("nan")

    @property
    def apriori_ok(self) -> bool:
        return bool(self.misfit <= self.c_sharp)


def lod_ocp_study(prob: OcpProblem, coarse_schedule: Sequence[int], fine_n: int = 128,
                  layers: Optional[int] = None, c_loc: float = 1.0, threads: Optional[int] = None,
                  tol: float = 1e-10, max_iter: int = 50) -> LodTable:
    """LOD state space with ``rho = H`` against the fine P1 / fine P0 reference solution."""
    schedule = _validate_schedule(coarse_schedule)
    fine = unit_square_mesh(fine_n)
    system = assemble_bilinear(fine, prob.coeff)
    Vf = StateSpace.p1(fine, prob.coeff, system=system)
    ref = pdas(prob, Vf, ControlSpace.p0(fine, fine), max_iter=max_iter, tol=tol)
    K, M = system.full, Vf.mass_full
    c_sharp = apriori_bounds(prob, poincare_constant(fine), prob.coeff.alpha, fine).c_sharp
    levels = []
    for n in schedule:
        coarse = unit_square_mesh(n)
        space = build_lod(coarse, fine, prob.coeff, layers=layers, c_loc=c_loc, threads=threads,
                          system=system)
        sol = lod_ocp_solve(prob, space, coarse, tol=tol, max_iter=max_iter)
        dy = sol.y.values - ref.y.values
        dp = sol.p.values - ref.p.values
        levels.append(LodOcpLevel(
            n=n, H=mesh_size(coarse), layers=space.layers,
            err_u_l2=p0_l2_difference(sol.u, ref.u),
            err_y_l2=math.sqrt(dy @ (M @ dy)), err_p_l2=math.sqrt(dp @ (M @ dp)),
            err_y_a=math.sqrt(dy @ (K @ dy)), err_p_a=math.sqrt(dp @ (K @ dp)),
            iters=sol.iterations,
            misfit=error_norms(fine, None, sol.y, prob.y_d, energy=False)[0], c_sharp=c_sharp,
        ))
    return LodTable(levels, extra={"reference_iterations": ref.iterations})
