"""Structured conforming triangulations of axis-aligned rectangles.

Every mesh is a Freudenthal triangulation: an ``nx`` by ``ny`` grid of
squares (or rectangles), each split along the diagonal running from its
lower-left to its upper-right corner.  Uniform red refinement of such a mesh
is again a Freudenthal mesh with twice the resolution, so the grid
description is carried along and used for fast point location.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MeshError


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with vertex coordinates and counterclockwise cells.

    ``parent`` and ``parent_map`` record the refinement lineage: cell ``k``
    of this mesh lies inside cell ``parent_map[k]`` of ``parent``.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_vertices: np.ndarray
    bbox: tuple[float, float, float, float]
    nx: int
    ny: int
    parent: Optional["Mesh"] = None
    parent_map: Optional[np.ndarray] = None
    _lookup: np.ndarray = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.cells)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    @property
    def depth(self) -> int:
        """Number of refinements separating this mesh from its root."""
        d, m = 0, self
        while m.parent is not None:
            d, m = d + 1, m.parent
        return d

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Index of a cell containing each point (points on edges pick one side)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x0, y0, x1, y1 = self.bbox
        sx = (pts[:, 0] - x0) / (x1 - x0) * self.nx
        sy = (pts[:, 1] - y0) / (y1 - y0) * self.ny
        i = np.clip(np.floor(sx).astype(np.int64), 0, self.nx - 1)
        j = np.clip(np.floor(sy).astype(np.int64), 0, self.ny - 1)
        upper = (sy - j) > (sx - i)
        return self._lookup[i, j, upper.astype(np.int64)]

    def barycentric(self, points: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points`` with respect to ``cells``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        tri = self.vertices[self.cells[cells]]
        d1 = tri[:, 1] - tri[:, 0]
        d2 = tri[:, 2] - tri[:, 0]
        r = pts - tri[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique sorted edges and, for each, the number of adjacent cells."""
        e = np.sort(self.cells[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts

    def cell_vertex_incidence(self):
        import scipy.sparse as sp

        rows = np.repeat(np.arange(self.n_cells), 3)
        return sp.csr_matrix(
            (np.ones(rows.size), (rows, self.cells.ravel())),
            shape=(self.n_cells, self.n_vertices),
        )

    def ancestor_map(self, ancestor: "Mesh") -> np.ndarray:
        """Map each cell of this mesh to the cell of ``ancestor`` containing it.

        Uses the refinement lineage when ``ancestor`` is on it; otherwise two
        Freudenthal grids of the same rectangle are nested exactly when the
        resolutions divide, and the map is found by point location.
        """
        cmap = np.arange(self.n_cells)
        m = self
        while m is not ancestor:
            if m.parent is None:
                if not self._grid_nested_in(ancestor):
                    raise MeshError("mesh is not a refinement descendant of the given coarse mesh")
                return ancestor.locate(self.centroids)
            cmap = m.parent_map[cmap]
            m = m.parent
        return cmap

    def _grid_nested_in(self, other: "Mesh") -> bool:
        return (
            np.allclose(self.bbox, other.bbox)
            and self.nx % other.nx == 0
            and self.ny % other.ny == 0
            and self.nx // other.nx == self.ny // other.ny
        )

    def is_descendant_of(self, other: "Mesh") -> bool:
        m = self
        while m is not None:
            if m is other:
                return True
            m = m.parent
        return self._grid_nested_in(other)

    def to_text(self) -> str:
        lines = [f"{x!r} {y!r}" for x, y in self.vertices.tolist()]
        lines.append("")
        lines.extend(f"{i} {j} {k}" for i, j, k in self.cells.tolist())
        return "\n".join(lines) + "\n"


def signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _boundary_vertices(cells: np.ndarray, n_vertices: int) -> np.ndarray:
    e = np.sort(cells[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1].ravel())


def _build_lookup(vertices, cells, bbox, nx, ny) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    c = vertices[cells].mean(axis=1)
    sx = (c[:, 0] - x0) / (x1 - x0) * nx
    sy = (c[:, 1] - y0) / (y1 - y0) * ny
    i = np.floor(sx).astype(np.int64)
    j = np.floor(sy).astype(np.int64)
    upper = ((sy - j) > (sx - i)).astype(np.int64)
    lookup = np.full((nx, ny, 2), -1, dtype=np.int64)
    lookup[i, j, upper] = np.arange(len(cells))
    if (lookup < 0).any():
        raise MeshError("cells do not form a Freudenthal grid")
    return lookup


def rectangle_mesh(nx: int, ny: Optional[int] = None,
                   bbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Freudenthal triangulation of ``bbox = (x0, y0, x1, y1)``."""
    ny = nx if ny is None else ny
    if int(nx) < 1 or int(ny) < 1:
        raise MeshError(f"grid resolution must be positive, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    x0, y0, x1, y1 = map(float, bbox)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate bounding box {bbox}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
    lower = np.column_stack([a, b, c])
    upper = np.column_stack([a, c, d])
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper
    bbox = (x0, y0, x1, y1)
    return Mesh(
        vertices=vertices,
        cells=cells,
        boundary_vertices=_boundary_vertices(cells, len(vertices)),
        bbox=bbox,
        nx=nx,
        ny=ny,
        _lookup=_build_lookup(vertices, cells, bbox, nx, ny),
    )


def unit_square_mesh(n: int) -> Mesh:
    """Freudenthal triangulation of (0,1)^2 with ``n`` squares per side."""
    if int(n) < 1:
        raise MeshError(f"n must be >= 1, got {n}")
    return rectangle_mesh(n)


def refine_uniform(m: Mesh) -> Mesh:
    """Split every cell into four congruent children through edge midpoints."""
    e = np.sort(m.cells[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, inverse = np.unique(e, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1, 3)
    mid = m.n_vertices + inverse  # midpoints of edges (0,1), (1,2), (2,0)
    vertices = np.vstack([m.vertices, 0.5 * (m.vertices[uniq[:, 0]] + m.vertices[uniq[:, 1]])])
    a, b, c = m.cells.T
    mab, mbc, mca = mid.T
    children = np.stack(
        [
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_map = np.repeat(np.arange(m.n_cells), 4)
    nx, ny = 2 * m.nx, 2 * m.ny
    return Mesh(
        vertices=vertices,
        cells=children,
        boundary_vertices=_boundary_vertices(children, len(vertices)),
        bbox=m.bbox,
        nx=nx,
        ny=ny,
        parent=m,
        parent_map=parent_map,
        _lookup=_build_lookup(vertices, children, m.bbox, nx, ny),
    )


def refine(m: Mesh, times: int) -> Mesh:
    for _ in range(times):
        m = refine_uniform(m)
    return m


def mesh_size(m: Mesh) -> float:
    """Maximum cell diameter."""
    p = m.vertices[m.cells]
    lengths = np.linalg.norm(p[:, [1, 2, 0]] - p, axis=2)
    return float(lengths.max())


def common_refinement(a: Mesh, b: Mesh) -> Mesh:
    """Coarsest Freudenthal mesh refining both ``a`` and ``b``.

    A Freudenthal grid of resolution ``k*n`` is nested in the one of
    resolution ``n`` for every integer ``k``, so the least common multiples of
    the resolutions give a common refinement.
    """
    if not np.allclose(a.bbox, b.bbox):
        raise MeshError("meshes cover different rectangles")
    if a.nx == b.nx and a.ny == b.ny:
        return a
    nx = int(np.lcm(a.nx, b.nx))
    ny = int(np.lcm(a.ny, b.ny))
    if nx == a.nx and ny == a.ny:
        return a
    if nx == b.nx and ny == b.ny:
        return b
    return rectangle_mesh(nx, ny, a.bbox)


def check_mesh(m: Mesh) -> None:
    """Raise :class:`MeshError` if a structural invariant is violated."""
    areas = m.areas
    if (areas <= 0).any():
        raise MeshError("mesh has cells with nonpositive signed area")
    x0, y0, x1, y1 = m.bbox
    if abs(areas.sum() - (x1 - x0) * (y1 - y0)) > 1e-12:
        raise MeshError("cells do not tile the domain")
    _, counts = m.edges()
    if counts.max() > 2:
        raise MeshError("edge shared by more than two cells")
    v = m.vertices[m.boundary_vertices]
    on_box = (
        np.isclose(v[:, 0], x0) | np.isclose(v[:, 0], x1)
        | np.isclose(v[:, 1], y0) | np.isclose(v[:, 1], y1)
    )
    if not on_box.all():
        raise MeshError("boundary vertex not on the domain boundary")
    allv = m.vertices
    on_box_all = (
        np.isclose(allv[:, 0], x0) | np.isclose(allv[:, 0], x1)
        | np.isclose(allv[:, 1], y0) | np.isclose(allv[:, 1], y1)
    )
    if on_box_all.sum() != len(m.boundary_vertices):
        raise MeshError("boundary vertex set is incomplete")
