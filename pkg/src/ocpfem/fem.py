"""P1 Lagrange finite elements on Freudenthal meshes.

Assembly of ``a(y, z) = int A grad y . grad z + c y z``, mass and load
vectors, Dirichlet elimination, Ritz and piecewise-constant L2 projections,
error norms and a discrete Poincare-Friedrichs constant.

Functions are passed around as plain callables ``f(points) -> values`` on
``(n, 2)`` point arrays; where a gradient is needed use :class:`ExactField`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import CoefficientError, ConvergenceError, OcpFemError
from .mesh import Mesh, common_refinement
from .quadrature import physical_points, rule

PointFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ExactField:
    """A function together with its gradient (and optionally its Laplacian)."""

    value: PointFunction
    grad: PointFunction
    laplacian: Optional[PointFunction] = None

    def __call__(self, x):
        return self.value(x)


def constant(v: float) -> ExactField:
    v = float(v)
    return ExactField(
        value=lambda x: np.full(len(x), v),
        grad=lambda x: np.zeros((len(x), 2)),
        laplacian=lambda x: np.zeros(len(x)),
    )


# --------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients of the bilinear form.

    ``A`` maps ``(n, 2)`` points to ``(n, 2, 2)`` symmetric matrices and
    ``c`` to ``(n,)`` nonnegative values.  ``mu`` is the ellipticity floor,
    ``alpha``/``beta`` bound ``a(v, v) / |v|_1^2``.  Rough (cellwise
    constant) coefficients set ``rough=True``; they are then evaluated once per
    element at its centroid, which picks the containing cell of the
    coefficient grid.
    """

    A: PointFunction
    c: PointFunction
    mu: float
    alpha: float
    beta: float
    rough: bool = False
    name: str = "custom"
    period: Optional[float] = None

    @classmethod
    def identity(cls) -> "CoefficientSet":
        return cls.isotropic(lambda x: np.ones(len(x)), mu=1.0, beta=1.0, name="identity")

    @classmethod
    def isotropic(cls, a: PointFunction, c: Optional[PointFunction] = None, *, mu: float,
                  beta: float, rough: bool = False, name: str = "isotropic",
                  period: Optional[float] = None) -> "CoefficientSet":
        def A(x):
            v = np.asarray(a(x), dtype=float)
            out = np.zeros((len(v), 2, 2))
            out[:, 0, 0] = v
            out[:, 1, 1] = v
            return out

        cfun = c if c is not None else (lambda x: np.zeros(len(x)))
        return cls(A=A, c=cfun, mu=mu, alpha=mu, beta=beta, rough=rough, name=name, period=period)

    @classmethod
    def checkerboard(cls, contrast: float, period: float) -> "CoefficientSet":
        """``A = a(x) I`` with ``a`` alternating between 1 and ``contrast``.

        ``period`` is the side of the repeating 2x2 block, so each
        constant square has side ``period / 2``.
        """
        if contrast <= 0 or period <= 0:
            raise CoefficientError("contrast and period must be positive")
        half = period / 2.0

        def a(x):
            k = np.floor(x[:, 0] / half).astype(np.int64) + np.floor(x[:, 1] / half).astype(np.int64)
            return np.where(k % 2 == 0, 1.0, float(contrast))

        lo, hi = min(1.0, contrast), max(1.0, contrast)
        return cls.isotropic(a, mu=lo, beta=hi, rough=True, period=period,
                             name=f"checkerboard({contrast:g},{period:g})")

    def evaluate(self, pts: np.ndarray, centroids: np.ndarray):
        """Sample ``A`` and ``c`` at quadrature points ``pts`` of shape (nc, nq, 2)."""
        nc, nq, _ = pts.shape
        if self.rough:
            A = np.repeat(np.asarray(self.A(centroids))[:, None], nq, axis=1)
            c = np.repeat(np.asarray(self.c(centroids), dtype=float)[:, None], nq, axis=1)
        else:
            flat = pts.reshape(-1, 2)
            A = np.asarray(self.A(flat)).reshape(nc, nq, 2, 2)
            c = np.asarray(self.c(flat), dtype=float).reshape(nc, nq)
        return A, c

    def validate(self, A: np.ndarray, c: np.ndarray) -> None:
        if not (np.isfinite(A).all() and np.isfinite(c).all()):
            raise CoefficientError("non-finite coefficient sample")
        a, b, d = A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1]
        lam_min = 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b**2)
        if lam_min.min() < self.mu * (1 - 1e-12):
            raise CoefficientError(
                f"ellipticity floor violated: min eigenvalue {lam_min.min():.3e} < mu={self.mu:.3e}"
            )
        if c.min() < 0:
            raise CoefficientError("reaction coefficient c must be nonnegative")


# --------------------------------------------------------------------------
# fields


def _bary_gradients(m: Mesh) -> np.ndarray:
    """Gradients of the three barycentric coordinates per cell, (nc, 3, 2)."""
    p = m.vertices[m.cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    return np.stack([-(g1 + g2), g1, g2], axis=1)


@dataclass(frozen=True, eq=False)
class P1Field:
    """Continuous piecewise-linear field, one value per vertex."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.mesh.n_vertices:
            raise OcpFemError("P1Field needs one value per mesh vertex")

    @classmethod
    def interpolate(cls, mesh: Mesh, f: PointFunction) -> "P1Field":
        return cls(mesh, np.asarray(f(mesh.vertices), dtype=float))

    def cell_gradients(self) -> np.ndarray:
        return np.einsum("ck,ckd->cd", self.values[self.mesh.cells], _bary_gradients(self.mesh))

    def __call__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        cells = self.mesh.locate(pts)
        lam = self.mesh.barycentric(pts, cells)
        return np.einsum("nk,nk->n", lam, self.values[self.mesh.cells[cells]])

    def grad(self, points):
        cells = self.mesh.locate(points)
        return self.cell_gradients()[cells]

    def as_exact(self) -> ExactField:
        return ExactField(value=self, grad=self.grad)


@dataclass(frozen=True, eq=False)
class P0Field:
    """Piecewise-constant field, one value per cell."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.mesh.n_cells:
            raise OcpFemError("P0Field needs one value per mesh cell")

    def __call__(self, points):
        return self.values[self.mesh.locate(points)]


@dataclass(frozen=True, eq=False)
class QuadratureField:
    """Values at the degree-5 quadrature points of ``mesh``, ordered cell by cell."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.mesh.n_cells * len(rule(5)[1]):
            raise OcpFemError("QuadratureField needs one value per degree-5 quadrature point")


def evaluate_on(m: Mesh, f, degree: int, with_grad: bool = False):
    """Values (and gradients) of ``f`` at the quadrature points of ``m``.

    Fields living on ``m`` itself are evaluated exactly per cell; anything
    else is treated as a point function.
    """
    pts, w = physical_points(m.vertices, m.cells, degree)
    nc, nq, _ = pts.shape
    if isinstance(f, P1Field) and f.mesh is m:
        bary, _ = rule(degree)
        vals = np.einsum("qk,ck->cq", bary, f.values[m.cells])
        grads = np.repeat(f.cell_gradients()[:, None], nq, axis=1) if with_grad else None
    elif isinstance(f, P0Field) and f.mesh is m:
        vals = np.repeat(f.values[:, None], nq, axis=1)
        grads = np.zeros((nc, nq, 2)) if with_grad else None
    elif isinstance(f, QuadratureField):
        if f.mesh is not m or degree != 5 or with_grad:
            raise OcpFemError("a QuadratureField can only be integrated on its own degree-5 rule")
        vals = f.values.reshape(nc, nq)
        grads = None
    else:
        flat = pts.reshape(-1, 2)
        vals = np.asarray(f(flat), dtype=float).reshape(nc, nq)
        grads = None
        if with_grad:
            if isinstance(f, (ExactField, P1Field)):
                grads = np.asarray(f.grad(flat), dtype=float).reshape(nc, nq, 2)
            elif isinstance(f, P0Field):
                grads = np.zeros((nc, nq, 2))
            else:
                raise OcpFemError("a gradient is required; pass an ExactField")
    return pts, w, vals, grads


def integrate(m: Mesh, f, degree: int = 5) -> float:
    _, w, vals, _ = evaluate_on(m, f, degree)
    return float((w * vals).sum())


def l2_norm(m: Mesh, f, degree: int = 5) -> float:
    _, w, vals, _ = evaluate_on(m, f, degree)
    return float(np.sqrt((w * vals**2).sum()))


def h1_seminorm(m: Mesh, f, degree: int = 5) -> float:
    _, w, _, grads = evaluate_on(m, f, degree, with_grad=True)
    return float(np.sqrt((w * (grads**2).sum(axis=2)).sum()))


# --------------------------------------------------------------------------
# assembly


@dataclass(frozen=True, eq=False)
class SpdSystem:
    """Assembled operator: ``full`` on all vertices, ``matrix`` on ``dofs``."""

    mesh: Mesh
    full: sp.csr_matrix
    matrix: sp.csr_matrix
    dofs: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.dofs)


def _scatter(m: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(m.cells, 3, axis=1).ravel()
    cols = np.tile(m.cells, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(m.n_vertices,) * 2).tocsr()


def _restrict(full: sp.csr_matrix, dofs: np.ndarray) -> sp.csr_matrix:
    return full[dofs][:, dofs].tocsr()


def assemble_bilinear(m: Mesh, coeff: CoefficientSet, check: bool = True,
                      degree: int = 2) -> SpdSystem:
    """Stiffness matrix of ``a(.,.)`` with boundary rows and columns eliminated."""
    pts, w = physical_points(m.vertices, m.cells, degree)
    A, c = coeff.evaluate(pts, m.centroids)
    if not (np.isfinite(A).all() and np.isfinite(c).all()):
        raise CoefficientError("non-finite coefficient sample")
    if check:
        coeff.validate(A, c)
    G = _bary_gradients(m)
    Abar = np.einsum("cq,cqij->cij", w, A)
    local = np.einsum("cai,cij,cbj->cab", G, Abar, G)
    bary, _ = rule(degree)
    local += np.einsum("cq,qa,qb->cab", w * c, bary, bary)
    full = _scatter(m, local)
    dofs = m.interior_vertices
    return SpdSystem(mesh=m, full=full, matrix=_restrict(full, dofs), dofs=dofs)


def assemble_mass(m: Mesh) -> sp.csr_matrix:
    """Exact P1 mass matrix on all vertices."""
    area = m.areas
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(m, area[:, None, None] * ref[None])


def assemble_load(m: Mesh, g, quad_degree: int = 5) -> np.ndarray:
    """Vector of ``int g phi_i`` over all vertices (before elimination)."""
    if quad_degree not in (2, 5):
        raise OcpFemError(f"quad_degree must be 2 or 5, got {quad_degree}")
    _, w, vals, _ = evaluate_on(m, g, quad_degree)
    if not np.isfinite(vals).all():
        raise OcpFemError("non-finite load sample")
    bary, _ = rule(quad_degree)
    local = np.einsum("cq,qa->ca", w * vals, bary)
    return np.bincount(m.cells.ravel(), weights=local.ravel(), minlength=m.n_vertices)


def solve_spd(system: SpdSystem, rhs: np.ndarray, tol: float = 1e-12) -> P1Field:
    """Solve with the Dirichlet-eliminated matrix; ``rhs`` may be full or reduced."""
    rhs = np.asarray(rhs, dtype=float)
    if len(rhs) == system.mesh.n_vertices:
        rhs = rhs[system.dofs]
    elif len(rhs) != system.dimension:
        raise OcpFemError(
            f"rhs has length {len(rhs)}, expected {system.mesh.n_vertices} or {system.dimension}"
        )
    x, _ = linalg.pcg(system.matrix, rhs, tol=tol)
    values = np.zeros(system.mesh.n_vertices)
    values[system.dofs] = x
    return P1Field(system.mesh, values)


def bilinear_load(m: Mesh, coeff: CoefficientSet, zeta, degree: int = 5) -> np.ndarray:
    """Vector of ``a(zeta, phi_i)`` over all vertices."""
    pts, w, vals, grads = evaluate_on(m, zeta, degree, with_grad=True)
    A, c = coeff.evaluate(pts, m.centroids)
    G = _bary_gradients(m)
    flux = np.einsum("cqij,cqj->cqi", A, grads)
    local = np.einsum("cq,cqi,cai->ca", w, flux, G)
    bary, _ = rule(degree)
    local += np.einsum("cq,qa->ca", w * c * vals, bary)
    return np.bincount(m.cells.ravel(), weights=local.ravel(), minlength=m.n_vertices)


def ritz_project(m: Mesh, coeff: CoefficientSet, zeta, system: Optional[SpdSystem] = None) -> P1Field:
    """Ritz projection: ``a(R zeta, v) = a(zeta, v)`` for all ``v`` in V_h."""
    system = system or assemble_bilinear(m, coeff)
    return solve_spd(system, bilinear_load(m, coeff, zeta))


def l2_project_p0(m: Mesh, v) -> P0Field:
    """Cell averages of ``v`` (degree-5 quadrature)."""
    _, w, vals, _ = evaluate_on(m, v, 5)
    if not np.isfinite(vals).all():
        raise OcpFemError("non-finite sample in L2 projection")
    return P0Field(m, (w * vals).sum(axis=1) / w.sum(axis=1))


def error_norms(m: Mesh, coeff: Optional[CoefficientSet], fld, exact, energy: bool = True):
    """``(||fld - exact||_L2, |fld - exact|_a)`` by degree-5 quadrature on ``m``.

    The energy error is ``None`` when ``energy`` is false; it is undefined for
    piecewise-constant fields.
    """
    if isinstance(fld, P0Field) and energy:
        raise OcpFemError("energy norm is not defined for a P0Field")
    pts, w, ev, eg = evaluate_on(m, exact, 5, with_grad=energy)
    _, _, fv, fg = evaluate_on(m, fld, 5, with_grad=energy)
    diff = fv - ev
    l2 = float(np.sqrt((w * diff**2).sum()))
    if not energy:
        return l2, None
    A, c = (coeff or CoefficientSet.identity()).evaluate(pts, m.centroids)
    dg = fg - eg
    dens = np.einsum("cqi,cqij,cqj->cq", dg, A, dg) + c * diff**2
    return l2, float(np.sqrt((w * dens).sum()))


def energy_norm(system: SpdSystem, values: np.ndarray) -> float:
    """``sqrt(a(v, v))`` of a P1 vertex vector."""
    return float(np.sqrt(max(values @ (system.full @ values), 0.0)))


def poincare_constant(m: Mesh, tol: float = 1e-8, max_iter: int = 500) -> float:
    """Discrete Poincare-Friedrichs constant ``1 / sqrt(lambda_min)``.

    ``lambda_min`` is the smallest eigenvalue of the Dirichlet Laplacian
    pencil (stiffness, mass), found by inverse power iteration.
    """
    lap = assemble_bilinear(m, CoefficientSet.identity())
    M = _restrict(assemble_mass(m), lap.dofs)
    K = lap.matrix
    x = np.ones(lap.dimension)
    lam_old = None
    for _ in range(max_iter):
        x, _ = linalg.pcg(K, M @ x, x0=x, tol=1e-13)
        x /= np.sqrt(x @ (M @ x))
        lam = float(x @ (K @ x))
        if lam_old is not None and abs(lam - lam_old) <= tol * lam:
            return 1.0 / np.sqrt(lam)
        lam_old = lam
    raise ConvergenceError("inverse power iteration did not converge")


# --------------------------------------------------------------------------
# P1 / P0 coupling


def p1_p0_coupling(state: Mesh, control: Mesh) -> sp.csr_matrix:
    """Matrix ``B[i, k] = int_{T_k} phi_i`` for P1 hats on ``state`` and cells of ``control``.

    Computed exactly on the common refinement of the two meshes.
    """
    if state is control:
        rows = state.cells.ravel()
        cols = np.repeat(np.arange(state.n_cells), 3)
        vals = np.repeat(state.areas / 3.0, 3)
        return sp.coo_matrix((vals, (rows, cols)), shape=(state.n_vertices, control.n_cells)).tocsr()
    ref = common_refinement(state, control)
    cen = ref.centroids
    area = ref.areas
    s = state.locate(cen) if ref is not state else np.arange(state.n_cells)
    k = control.locate(cen) if ref is not control else np.arange(control.n_cells)
    lam = state.barycentric(cen, s)
    rows = state.cells[s].ravel()
    cols = np.repeat(k, 3)
    vals = (area[:, None] * lam).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(state.n_vertices, control.n_cells)).tocsr()


def p0_l2_difference(a: P0Field, b) -> float:
    """L2 distance between a P0 field and a P0 field or function, on a common refinement."""
    if isinstance(b, P0Field):
        ref = common_refinement(a.mesh, b.mesh)
        cen = ref.centroids
        d = a(cen) - b(cen)
        return float(np.sqrt((ref.areas * d**2).sum()))
    return error_norms(a.mesh, None, a, b, energy=False)[0]
