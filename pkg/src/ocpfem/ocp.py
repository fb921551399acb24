"""Discrete box-constrained optimal control by a primal-dual active-set method.

The discrete problem minimizes ``1/2 ||y - y_d||^2 + gamma/2 ||u||^2``
subject to the Galerkin state equation in a state space ``V`` and the
bounds ``Phi_1 <= u <= Phi_2`` in a control space ``W``.  Two control
spaces are provided: piecewise constants on a control mesh (bounds are the
cell averages of ``phi_1``, ``phi_2``) and the variational discretization,
where the control is represented by its values at the degree-5 quadrature
points of the state mesh and induced pointwise from the adjoint.

Every control space is described by quadrature weights ``w`` and a coupling
matrix ``B[i, k] = int phi_i chi_k``, so ``Pi p = B^T p / w`` is the
projection of a state-space function onto the control representation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import ConvergenceError, OcpFemError
from .fem import (
    CoefficientSet,
    P0Field,
    P1Field,
    QuadratureField,
    SpdSystem,
    assemble_bilinear,
    assemble_load,
    assemble_mass,
    l2_norm,
    l2_project_p0,
    p1_p0_coupling,
    h1_seminorm,
)
from .mesh import Mesh
from .quadrature import physical_points, rule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OcpProblem:
    """Continuous problem data; ``phi1``/``phi2`` may be :class:`ExactField`."""

    coeff: CoefficientSet
    gamma: float
    f: object
    y_d: object
    phi1: object
    phi2: object

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise OcpFemError(f"gamma must be in (0,1], got {self.gamma}")


# --------------------------------------------------------------------------
# discrete spaces


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Galerkin subspace of the P1 space on ``mesh`` spanned by the columns of ``basis``."""

    mesh: Mesh
    system: SpdSystem
    basis: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    mass_full: sp.csr_matrix
    solve_tol: float = 1e-13

    @classmethod
    def p1(cls, mesh: Mesh, coeff: CoefficientSet, system: Optional[SpdSystem] = None) -> "StateSpace":
        system = system or assemble_bilinear(mesh, coeff)
        n = len(system.dofs)
        basis = sp.csr_matrix((np.ones(n), (system.dofs, np.arange(n))), shape=(mesh.n_vertices, n))
        return cls.from_basis(mesh, system, basis)

    @classmethod
    def from_basis(cls, mesh: Mesh, system: SpdSystem, basis) -> "StateSpace":
        basis = sp.csr_matrix(basis)
        mass_full = assemble_mass(mesh)
        bt = basis.T.tocsr()
        return cls(
            mesh=mesh,
            system=system,
            basis=basis,
            stiffness=(bt @ system.full @ basis).tocsr(),
            mass=(bt @ mass_full @ basis).tocsr(),
            mass_full=mass_full,
        )

    @property
    def dimension(self) -> int:
        return self.basis.shape[1]

    def solve(self, rhs: np.ndarray, x0=None) -> np.ndarray:
        x, _ = linalg.pcg(self.stiffness, rhs, x0=x0, tol=self.solve_tol)
        return x

    def load(self, g) -> np.ndarray:
        return self.basis.T @ assemble_load(self.mesh, g, 5)

    def field(self, coeffs: np.ndarray) -> P1Field:
        return P1Field(self.mesh, self.basis @ coeffs)


@dataclass(frozen=True, eq=False)
class ControlSpace:
    kind: str  # "p0" or "variational"
    mesh: Mesh
    weights: np.ndarray
    coupling: sp.csr_matrix  # state-mesh vertices x control dofs
    points: np.ndarray

    @classmethod
    def p0(cls, state_mesh: Mesh, control_mesh: Mesh) -> "ControlSpace":
        return cls(
            kind="p0",
            mesh=control_mesh,
            weights=control_mesh.areas,
            coupling=p1_p0_coupling(state_mesh, control_mesh),
            points=control_mesh.centroids,
        )

    @classmethod
    def variational(cls, state_mesh: Mesh) -> "ControlSpace":
        pts, w = physical_points(state_mesh.vertices, state_mesh.cells, 5)
        bary, _ = rule(5)
        nc, nq = w.shape
        rows = np.repeat(state_mesh.cells[:, None, :], nq, axis=1).ravel()
        cols = np.repeat(np.arange(nc * nq), 3)
        vals = (w[:, :, None] * bary[None]).ravel()
        B = sp.coo_matrix((vals, (rows, cols)), shape=(state_mesh.n_vertices, nc * nq)).tocsr()
        return cls(kind="variational", mesh=state_mesh, weights=w.ravel(), coupling=B,
                   points=pts.reshape(-1, 2))

    @property
    def dimension(self) -> int:
        return len(self.weights)

    def project(self, f) -> np.ndarray:
        """``Q f`` in the control representation (cell averages or point values)."""
        if self.kind == "p0":
            return l2_project_p0(self.mesh, f).values
        return np.asarray(f(self.points), dtype=float)

    def field(self, values: np.ndarray):
        if self.kind == "p0":
            return P0Field(self.mesh, values)
        return QuadratureField(self.mesh, values)

    def norm(self, values: np.ndarray) -> float:
        return float(np.sqrt(self.weights @ values**2))

    def integral(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


# --------------------------------------------------------------------------
# pointwise operations


def clamp_control(p_over_gamma, lo, hi) -> np.ndarray:
    """``max(lo, min(hi, -p_over_gamma))`` componentwise."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if (lo > hi).any():
        raise OcpFemError("infeasible bounds: lower bound exceeds upper bound")
    return np.maximum(lo, np.minimum(hi, -np.asarray(p_over_gamma, dtype=float)))


def split_multiplier(lam):
    """Positive and negative parts ``(max(lam, 0), min(lam, 0))``."""
    lam = np.asarray(lam, dtype=float)
    return np.maximum(lam, 0.0), np.minimum(lam, 0.0)


# --------------------------------------------------------------------------
# solution


@dataclass(frozen=True, eq=False)
class KktSolution:
    y: P1Field
    p: P1Field
    u: Union[P0Field, QuadratureField]
    lam: Union[P0Field, QuadratureField]
    lam1: Union[P0Field, QuadratureField]
    lam2: Union[P0Field, QuadratureField]
    lower: np.ndarray
    upper: np.ndarray
    iterations: int
    kkt_residual: float
    residual_history: list
    active_history: list
    objective: float
    complementarity: tuple
    gamma: float
    state_space: StateSpace = field(repr=False)
    control_space: ControlSpace = field(repr=False)
    y_coeffs: np.ndarray = field(repr=False)
    p_coeffs: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {
            "gamma": self.gamma,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "objective": self.objective,
            "active_lower": int(self.lower.sum()),
            "active_upper": int(self.upper.sum()),
            "inactive": int((~(self.lower | self.upper)).sum()),
            "control_dofs": int(self.control_space.dimension),
            "control_kind": self.control_space.kind,
            "residual_history": list(self.residual_history),
        }


class _Discrete:
    """Assembled discrete optimality system shared by the PDAS steps."""

    def __init__(self, prob: OcpProblem, V: StateSpace, W: ControlSpace):
        self.prob, self.V, self.W = prob, V, W
        self.B = (V.basis.T @ W.coupling).tocsr()
        self.Bt = self.B.T.tocsr()
        self.F = V.load(prob.f)
        self.Yd_full = assemble_load(V.mesh, prob.y_d, 5)
        self.Yd = V.basis.T @ self.Yd_full
        self.yd_sq = l2_norm(V.mesh, prob.y_d) ** 2
        self.lo = W.project(prob.phi1)
        self.hi = W.project(prob.phi2)
        if (self.lo > self.hi).any():
            raise OcpFemError("infeasible bounds: Q phi1 > Q phi2 somewhere")

    def state(self, u, x0=None):
        return self.V.solve(self.F + self.B @ u, x0=x0)

    def adjoint(self, y, x0=None):
        return self.V.solve(self.V.mass @ y - self.Yd, x0=x0)

    def project_adjoint(self, p):
        return (self.Bt @ p) / self.W.weights

    def objective(self, y, u) -> float:
        yf = self.V.basis @ y
        misfit = yf @ (self.V.mass_full @ yf) - 2.0 * yf @ self.Yd_full + self.yd_sq
        return 0.5 * misfit + 0.5 * self.prob.gamma * float(self.W.weights @ u**2)

    def solve_inactive(self, u, inactive, tol=1e-12, maxiter=200):
        """Given fixed active values in ``u``, solve ``gamma u + Pi p(u) = 0`` on ``inactive``."""
        g, w = self.prob.gamma, self.W.weights
        u = u.copy()
        idx = np.flatnonzero(inactive)
        if idx.size == 0:
            return u
        u_act = u.copy()
        u_act[idx] = 0.0
        p_act = self.adjoint(self.state(u_act))
        b = -(self.Bt @ p_act)[idx]

        def H(v):
            full = np.zeros_like(u)
            full[idx] = v
            z = self.V.solve(self.V.mass @ self.V.solve(self.B @ full))
            return g * w[idx] * v + (self.Bt @ z)[idx]

        dinv = 1.0 / (g * w[idx])
        x = u[idx]
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            u[idx] = 0.0
            return u
        r = b - H(x)
        z = dinv * r
        d = z.copy()
        rz = r @ z
        for _ in range(maxiter):
            if np.linalg.norm(r) <= tol * bnorm:
                break
            q = H(d)
            alpha = rz / (d @ q)
            x = x + alpha * d
            r = r - alpha * q
            z = dinv * r
            rz_new = r @ z
            d = z + (rz_new / rz) * d
            rz = rz_new
        else:
            raise ConvergenceError("inner CG on the inactive set did not converge")
        u[idx] = x
        return u


def pdas(prob: OcpProblem, V: StateSpace, W: ControlSpace, max_iter: int = 50,
         tol: float = 1e-10) -> KktSolution:
    """Primal-dual active-set iteration with complementarity parameter ``gamma``."""
    if tol <= 0:
        raise OcpFemError("tol must be positive")
    D = _Discrete(prob, V, W)
    g = prob.gamma
    lo, hi = D.lo, D.hi
    u = clamp_control(np.zeros(W.dimension), lo, hi)
    y = D.state(u)
    p = D.adjoint(y)
    history, active = [], []
    it = 0
    while True:
        Pp = D.project_adjoint(p)
        lam = Pp + g * u
        res = W.norm(u - clamp_control(Pp / g, lo, hi))
        history.append(res)
        lower = lam - g * (u - lo) > 0
        upper = lam - g * (u - hi) < 0
        log.debug("pdas it=%d residual=%.3e lower=%d upper=%d", it, res, lower.sum(), upper.sum())
        if res <= tol:
            active.append((int(lower.sum()), int(upper.sum())))
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"PDAS did not converge in {max_iter} iterations (residual {res:.3e})",
                history=history,
            )
        active.append((int(lower.sum()), int(upper.sum())))
        u_new = u.copy()
        u_new[lower] = lo[lower]
        u_new[upper] = hi[upper]
        u = D.solve_inactive(u_new, ~(lower | upper))
        y = D.state(u, x0=y)
        p = D.adjoint(y, x0=p)
        it += 1

    u = np.clip(u, lo, hi)
    Pp = D.project_adjoint(p)
    lam = Pp + g * u
    res = W.norm(u - clamp_control(Pp / g, lo, hi))
    history[-1] = res
    lam1, lam2 = split_multiplier(lam)
    comp = (W.integral(lam1 * (u - lo)), W.integral(lam2 * (u - hi)))
    return KktSolution(
        y=V.field(y),
        p=V.field(p),
        u=W.field(u),
        lam=W.field(lam),
        lam1=W.field(lam1),
        lam2=W.field(lam2),
        lower=lower,
        upper=upper,
        iterations=it,
        kkt_residual=res,
        residual_history=history,
        active_history=active,
        objective=D.objective(y, u),
        complementarity=comp,
        gamma=g,
        state_space=V,
        control_space=W,
        y_coeffs=y,
        p_coeffs=p,
    )


def solve_ocp(prob: OcpProblem, state_mesh: Mesh, control_mesh: Union[Mesh, str],
              max_iter: int = 50, tol: float = 1e-10) -> KktSolution:
    """Solve the discrete problem with P1 states on ``state_mesh``.

    ``control_mesh`` is either a :class:`Mesh` (piecewise-constant controls)
    or the string ``"variational"``.
    """
    V = StateSpace.p1(state_mesh, prob.coeff)
    if isinstance(control_mesh, str):
        if control_mesh != "variational":
            raise OcpFemError(f"unknown control discretization {control_mesh!r}")
        W = ControlSpace.variational(state_mesh)
    else:
        W = ControlSpace.p0(state_mesh, control_mesh)
    return pdas(prob, V, W, max_iter=max_iter, tol=tol)


def discrete_objective(prob: OcpProblem, V: StateSpace, W: ControlSpace, u: np.ndarray) -> float:
    """Objective of the discrete problem at the control ``u`` (state solved from ``u``)."""
    D = _Discrete(prob, V, W)
    return D.objective(D.state(np.asarray(u, dtype=float)), u)


def reduced_gradient(sol: KktSolution) -> np.ndarray:
    """Coefficients of ``u -> (p + gamma u, u)`` at the solution, one per control dof."""
    V, W = sol.state_space, sol.control_space
    Bt = (V.basis.T @ W.coupling).T
    return Bt @ sol.p_coeffs + sol.gamma * W.weights * sol.u.values


# --------------------------------------------------------------------------
# a priori bounds


@dataclass(frozen=True)
class AprioriBounds:
    c_sharp: float
    state_misfit_bound: float
    control_bound: float
    adjoint_seminorm_bound: float
    control_seminorm_bound: float


def apriori_bounds(prob: OcpProblem, C_PF: float, alpha: float, mesh: Mesh) -> AprioriBounds:
    """Data-only bounds on the optimal state, control and adjoint.

    Norms of the data are computed by degree-5 quadrature on ``mesh``.
    """
    yd = l2_norm(mesh, prob.y_d)
    f = l2_norm(mesh, prob.f)
    phi_min = min(l2_norm(mesh, prob.phi1), l2_norm(mesh, prob.phi2))
    k = C_PF**2 / alpha**2
    c_sharp = float(np.sqrt(2 * yd**2 + 4 * k * f**2 + (4 * k + 1) * phi_min**2))
    p_semi = (C_PF / alpha) * c_sharp

    def semi(phi):
        return h1_seminorm(mesh, phi) if hasattr(phi, "grad") else 0.0

    u_semi = max(semi(prob.phi1), semi(prob.phi2), p_semi / prob.gamma)
    return AprioriBounds(
        c_sharp=c_sharp,
        state_misfit_bound=c_sharp,
        control_bound=c_sharp / prob.gamma,
        adjoint_seminorm_bound=p_semi,
        control_seminorm_bound=u_semi,
    )
