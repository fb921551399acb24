"""Localized orthogonal decomposition (LOD) on nested Freudenthal meshes.

The quasi-interpolation ``I_H`` maps a fine P1 function to the coarse P1
space: on every coarse cell take the L2 projection onto linears, then average
the resulting vertex values over the cells sharing each coarse vertex, and set
Dirichlet vertices to zero.  ``I_H`` is a projection, so ``(1 - E I_H)`` maps
fine functions onto the fine-scale kernel ``W_h = ker I_H`` (``E`` is the
coarse-to-fine prolongation).

The corrector of coarse hat ``lambda_z`` with ``l`` layers is the
a-orthogonal projection of ``lambda_z`` onto ``(1 - E I_H) V_h(w_{l-1})``,
where ``w_0`` is the support of ``lambda_z`` and ``w_{k+1}`` adds every
coarse cell touching ``w_k``.  The corrector is supported in ``w_l`` and is
computed by CG on the semidefinite operator ``T^T K T`` (no saddle point).
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import CoefficientError, MeshError
from .fem import (
    CoefficientSet,
    P0Field,
    P1Field,
    SpdSystem,
    assemble_bilinear,
    assemble_load,
    p1_p0_coupling,
)
from .mesh import Mesh, mesh_size
from .ocp import ControlSpace, KktSolution, OcpProblem, StateSpace, pdas

log = logging.getLogger(__name__)

# inverse of the P1 element mass matrix, times the cell area
_MINV = np.array([[9.0, -3.0, -3.0], [-3.0, 9.0, -3.0], [-3.0, -3.0, 9.0]])
_MID = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def default_layers(coarse: Mesh, c_loc: float = 1.0) -> int:
    """``ceil(c_loc * log2(1 / H))``, at least 1."""
    return max(1, math.ceil(c_loc * math.log2(1.0 / mesh_size(coarse)) - 1e-12))


def threads_from_env() -> int:
    try:
        return max(1, int(os.environ.get("OCPFEM_THREADS", "1")))
    except ValueError:
        return 1


def check_resolution(fine: Mesh, coeff: CoefficientSet) -> None:
    """Rough checkerboards must be aligned with and resolved by the fine grid."""
    if coeff.period is None:
        return
    x0, y0, x1, y1 = fine.bbox
    h = min((x1 - x0) / fine.nx, (y1 - y0) / fine.ny)
    cells_per_square = (coeff.period / 2.0) / h
    if coeff.period < 2 * h * (1 - 1e-9) or abs(cells_per_square - round(cells_per_square)) > 1e-9:
        raise CoefficientError(
            f"coefficient period {coeff.period:g} is not resolved by the fine mesh (cell size {h:g})"
        )


class LodOperators:
    """Fine-scale operators shared by all corrector problems."""

    def __init__(self, coarse: Mesh, fine: Mesh, coeff: CoefficientSet,
                 system: Optional[SpdSystem] = None):
        self.coarse, self.fine, self.coeff = coarse, fine, coeff
        self.cmap = fine.ancestor_map(coarse)
        check_resolution(fine, coeff)
        self.system = system or assemble_bilinear(fine, coeff)
        self.K = self.system.full
        self.coarse_dofs = coarse.interior_vertices
        self._coarse_index = np.full(coarse.n_vertices, -1)
        self._coarse_index[self.coarse_dofs] = np.arange(len(self.coarse_dofs))
        self.E = self._prolongation()
        self.R = self._interpolation()
        self.Cc = coarse.cell_vertex_incidence().tocsc()
        self.CcT = self.Cc.T.tocsr()
        self.Cf = fine.cell_vertex_incidence()
        self.CfT = self.Cf.T.tocsr()
        self.fine_valence = np.asarray(self.CfT.sum(axis=1)).ravel()
        self.fine_boundary = np.zeros(fine.n_vertices, dtype=bool)
        self.fine_boundary[fine.boundary_vertices] = True

    def _fine_bary(self, pts_per_cell: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points (nf, k, 2) in the ancestor coarse cells."""
        nf, k, _ = pts_per_cell.shape
        cells = np.repeat(self.cmap, k)
        return self.coarse.barycentric(pts_per_cell.reshape(-1, 2), cells).reshape(nf, k, 3)

    def _prolongation(self) -> sp.csr_matrix:
        f, c = self.fine, self.coarse
        lam = self._fine_bary(f.vertices[f.cells])  # (nf, 3 fine vertices, 3 coarse)
        rows = np.repeat(f.cells[:, :, None], 3, axis=2).ravel()
        cverts = c.cells[self.cmap]
        cols = np.repeat(cverts[:, None, :], 3, axis=1).ravel()
        vals = lam.ravel()
        keep = (np.abs(vals) > 1e-14) & (self._coarse_index[cols] >= 0)
        rows, cols, vals = rows[keep], self._coarse_index[cols[keep]], vals[keep]
        key = rows * len(self.coarse_dofs) + cols
        _, first = np.unique(key, return_index=True)
        return sp.csr_matrix((vals[first], (rows[first], cols[first])),
                             shape=(f.n_vertices, len(self.coarse_dofs)))

    def _interpolation(self) -> sp.csr_matrix:
        f, c = self.fine, self.coarse
        p = f.vertices[f.cells]
        mids = np.einsum("mk,ckd->cmd", _MID, p)  # edge midpoints of fine cells
        lam_c = self._fine_bary(mids)  # (nf, 3 mids, 3 coarse)
        # int_t phi_a lambda_j = |t|/3 sum_m phi_a(m) lambda_j(m)
        local = (f.areas / 3.0)[:, None, None] * np.einsum("ma,cmj->caj", _MID, lam_c)
        # L2 projection onto linears on the coarse cell: apply M_T^{-1}
        carea = c.areas[self.cmap]
        G = np.einsum("jk,cak->caj", _MINV, local) / carea[:, None, None]
        valence = np.bincount(c.cells.ravel(), minlength=c.n_vertices).astype(float)
        cverts = c.cells[self.cmap]  # (nf, 3)
        rows = np.repeat(cverts[:, None, :], 3, axis=1)  # (nf, a, j)
        cols = np.repeat(f.cells[:, :, None], 3, axis=2)
        vals = G / valence[rows]
        rows, cols, vals = rows.ravel(), cols.ravel(), vals.ravel()
        idx = self._coarse_index[rows]
        keep = idx >= 0
        R = sp.coo_matrix((vals[keep], (idx[keep], cols[keep])),
                          shape=(len(self.coarse_dofs), f.n_vertices)).tocsr()
        R.sum_duplicates()
        return R

    def interpolate(self, fine_values: np.ndarray) -> np.ndarray:
        """Coarse interior coefficients of ``I_H v``."""
        return self.R @ fine_values

    def coarse_patch(self, z: int, layers: int) -> np.ndarray:
        """Boolean mask of coarse cells in ``w_layers`` around coarse vertex ``z``."""
        cells = np.asarray(self.Cc[:, z].todense()).ravel() > 0
        for _ in range(layers):
            verts = (self.CcT @ cells.astype(float)) > 0
            cells = (self.Cc @ verts.astype(float)) > 0
        return cells

    def _interior_fine_vertices(self, coarse_cells: np.ndarray) -> np.ndarray:
        fine_in = coarse_cells[self.cmap].astype(float)
        count = self.CfT @ fine_in
        return (count == self.fine_valence) & ~self.fine_boundary

    def corrector(self, z: int, layers: int, tol: float = 1e-11, backend=None) -> sp.csr_matrix:
        """Corrector of the hat of coarse vertex ``z`` as a sparse fine column vector."""
        inner = self.coarse_patch(z, layers - 1)
        outer = self.coarse_patch(z, layers)
        work = np.flatnonzero(self._interior_fine_vertices(outer))
        free = self._interior_fine_vertices(inner)[work]
        cverts = np.unique(self.coarse.cells[inner].ravel())
        cnodes = self._coarse_index[cverts]
        cnodes = cnodes[cnodes >= 0]
        K = self.K[work][:, work].tocsr()
        R = self.R[cnodes][:, work].tocsr()
        E = self.E[work][:, cnodes].tocsr()
        zi = self._coarse_index[z]
        hat = np.asarray(self.E[work, zi].todense()).ravel()
        mask = free.astype(float)
        s = K @ hat
        b = mask * (s - R.T @ (E.T @ s))
        if np.linalg.norm(b) <= 1e-13 * np.linalg.norm(mask * s):
            # the patch kernel is trivial (e.g. H = h): only round-off remains
            return sp.csr_matrix((self.fine.n_vertices, 1))
        v, _ = linalg.projected_pcg(K, R, E, mask, b, tol=tol, backend=backend)
        v = mask * v
        phi = v - E @ (R @ v)
        nz = np.flatnonzero(phi)
        return sp.csr_matrix(
            (phi[nz], (work[nz], np.zeros(nz.size, dtype=int))), shape=(self.fine.n_vertices, 1)
        )


@dataclass(frozen=True, eq=False)
class LodSpace:
    coarse_mesh: Mesh
    fine_mesh: Mesh
    layers: int
    coeff: CoefficientSet
    basis: sp.csr_matrix  # fine vertices x coarse interior vertices
    correctors: sp.csr_matrix
    operators: LodOperators = field(repr=False)
    state_space: StateSpace = field(repr=False)

    @property
    def interpolation(self) -> sp.csr_matrix:
        return self.operators.R

    @property
    def coarse_dofs(self) -> np.ndarray:
        return self.operators.coarse_dofs

    @property
    def stiffness(self) -> sp.csr_matrix:
        return self.state_space.stiffness


def build_lod(coarse: Mesh, fine: Mesh, coeff: CoefficientSet, layers: Optional[int] = None,
              c_loc: float = 1.0, threads: Optional[int] = None, tol: float = 1e-11,
              system: Optional[SpdSystem] = None) -> LodSpace:
    """Corrected basis ``lambda_z - Q_l lambda_z`` for every coarse interior vertex."""
    if not fine.is_descendant_of(coarse):
        raise MeshError("fine mesh is not a refinement descendant of the coarse mesh")
    layers = default_layers(coarse, c_loc) if layers is None else int(layers)
    if layers < 1:
        raise MeshError("patch layers must be >= 1")
    ops = LodOperators(coarse, fine, coeff, system=system)
    n = len(ops.coarse_dofs)
    threads = threads_from_env() if threads is None else max(1, int(threads))

    def work(i):
        return ops.corrector(ops.coarse_dofs[i], layers, tol=tol)

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(work, range(n)))
    else:
        cols = [work(i) for i in range(n)]
    correctors = sp.hstack(cols, format="csr") if n else sp.csr_matrix((fine.n_vertices, 0))
    basis = (ops.E - correctors).tocsr()
    basis.eliminate_zeros()
    log.info("built LOD space: %d coarse dofs, %d layers", n, layers)
    return LodSpace(
        coarse_mesh=coarse,
        fine_mesh=fine,
        layers=layers,
        coeff=coeff,
        basis=basis,
        correctors=correctors,
        operators=ops,
        state_space=StateSpace.from_basis(fine, ops.system, basis),
    )


def lod_solve(space: LodSpace, g) -> P1Field:
    """Galerkin solution of ``a(v, w) = int g w`` in the LOD space, as a fine field."""
    fine = space.fine_mesh
    if isinstance(g, P0Field):
        load = p1_p0_coupling(fine, g.mesh) @ g.values
    else:
        load = assemble_load(fine, g, 5)
    V = space.state_space
    return V.field(V.solve(V.basis.T @ load))


def lod_ocp_solve(prob: OcpProblem, space: LodSpace, control_mesh: Mesh, tol: float = 1e-10,
                  max_iter: int = 50) -> KktSolution:
    """PDAS with the LOD space as state space and P0 controls on ``control_mesh``."""
    W = ControlSpace.p0(space.fine_mesh, control_mesh)
    return pdas(prob, space.state_space, W, max_iter=max_iter, tol=tol)
