"""Interface-aligned meshes with a tagged interior damped region.

The domain is the unit interval (1D) or the unit square (2D).  A damped
subregion ``omega`` (an interval, or an axis-aligned rectangle) sits strictly
inside the domain; its boundary is the material interface.  Meshes are built
so that every element lies entirely inside or entirely outside the damped
region: the damping coefficient is discontinuous across the interface and the
mesh must resolve that discontinuity exactly, not smear it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "Region",
    "Mesh",
    "DampingField",
    "MeshError",
    "build_interval_mesh",
    "build_square_mesh",
    "damped_nodes",
    "elastic_nodes",
    "interface_nodes",
    "interior_nodes",
    "damped_measure",
    "dump_mesh",
]


class MeshError(ValueError):
    """Raised for invalid mesh requests (bad region, resolution, alignment)."""


class Region(IntEnum):
    ELASTIC = 0
    DAMPED = 1


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh of the unit interval or unit square.

    ``nodes`` has shape (n_nodes,) in 1D and (n_nodes, 2) in 2D.  ``elements``
    holds node-index tuples (segments or triangles), ``element_region`` the
    per-element material tag, ``boundary_nodes`` the node indices on the outer
    boundary, and ``interface_facets`` the facets making up the boundary of
    the damped region (node indices: shape (m, 1) in 1D, (m, 2) in 2D).
    ``h`` is the largest element diameter.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    element_region: np.ndarray
    boundary_nodes: np.ndarray
    interface_facets: np.ndarray
    h: float

    def __post_init__(self):
        for arr in (self.nodes, self.elements, self.element_region,
                    self.boundary_nodes, self.interface_facets):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def node_coords(self, idx) -> np.ndarray:
        return self.nodes[idx]


@dataclass(frozen=True)
class DampingField:
    """Damping patch: viscosity coefficient ``d`` on the region ``omega``.

    ``omega`` is an ``(a, b)`` interval in 1D or ``((x0, x1), (y0, y1))`` in
    2D, strictly inside the domain.  ``omega=None`` means the whole domain is
    damped; that configuration touches the outer boundary and exists only for
    analytic cross-checks (modal damping with known eigenvalues), so it
    bypasses the interiority requirement on purpose.
    """

    d: float
    omega: tuple | None = field(default=None)

    def __post_init__(self):
        if self.d < 0:
            raise MeshError(f"damping coefficient must be nonnegative, got {self.d}")
        if self.omega is not None:
            _validate_omega(self.omega)

    @property
    def full_domain(self) -> bool:
        return self.omega is None


def _validate_omega(omega) -> None:
    arr = np.asarray(omega, dtype=float)
    if arr.shape == (2,):
        a, b = arr
        if not (0.0 < a < b < 1.0):
            raise MeshError(f"need 0 < a < b < 1 for the damped interval, got ({a}, {b})")
    elif arr.shape == (2, 2):
        for lo, hi in arr:
            if not (0.0 < lo < hi < 1.0):
                raise MeshError(f"damped rectangle must lie strictly inside the unit square, got {omega}")
    else:
        raise MeshError(f"omega must be (a, b) or ((x0, x1), (y0, y1)), got {omega!r}")


def build_interval_mesh(n_cells: int, omega: tuple | None) -> Mesh:
    """Uniform mesh of (0, 1) with the damped interval aligned to grid nodes.

    The endpoints of ``omega`` are snapped to the nearest grid node; elements
    are tagged by the position of their midpoint.  Rejects damped intervals
    that touch the outer boundary (also after snapping) or collapse to a
    single node.  ``omega=None`` tags every element as damped (test
    configuration, see :class:`DampingField`).
    """
    if n_cells < 4:
        raise MeshError(f"n_cells must be >= 4, got {n_cells}")
    nodes = np.linspace(0.0, 1.0, n_cells + 1)
    elements = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    h = 1.0 / n_cells

    if omega is None:
        region = np.full(n_cells, Region.DAMPED, dtype=np.int8)
        ifacets = np.empty((0, 1), dtype=int)
    else:
        _validate_omega(np.asarray(omega, dtype=float).reshape(2))
        a, b = float(omega[0]), float(omega[1])
        ia, ib = round(a * n_cells), round(b * n_cells)
        if ia == ib:
            raise MeshError(
                f"n_cells={n_cells} cannot separate omega=({a}, {b}): endpoints snap to the same node")
        if ia < 1 or ib > n_cells - 1:
            raise MeshError(f"omega=({a}, {b}) touches the outer boundary after snapping to the grid")
        mid = 0.5 * (nodes[elements[:, 0]] + nodes[elements[:, 1]])
        region = np.where((mid > ia * h) & (mid < ib * h), Region.DAMPED, Region.ELASTIC).astype(np.int8)
        ifacets = np.array([[ia], [ib]], dtype=int)

    mesh = Mesh(dim=1, nodes=nodes, elements=elements, element_region=region,
                boundary_nodes=np.array([0, n_cells]), interface_facets=ifacets, h=h)
    _check_damped_interior(mesh, full=omega is None)
    return mesh


def build_square_mesh(n: int, omega: tuple | None) -> Mesh:
    """Structured triangulation of the unit square (two triangles per cell).

    ``omega`` is an axis-aligned rectangle with corners snapped to the n-by-n
    grid; triangles are tagged by centroid.  Interface facets are the grid
    edges along the rectangle boundary.  ``omega=None`` damps everything
    (test configuration).
    """
    if n < 8:
        raise MeshError(f"n must be >= 8, got {n}")
    coords = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            tris.append((nid(i, j), nid(i + 1, j), nid(i + 1, j + 1)))
            tris.append((nid(i, j), nid(i + 1, j + 1), nid(i, j + 1)))
    elements = np.array(tris, dtype=int)
    h = np.sqrt(2.0) / n

    ii, jj = np.divmod(np.arange((n + 1) ** 2), n + 1)
    on_bnd = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    boundary = np.flatnonzero(on_bnd)

    if omega is None:
        region = np.full(len(elements), Region.DAMPED, dtype=np.int8)
        ifacets = np.empty((0, 2), dtype=int)
    else:
        arr = np.asarray(omega, dtype=float)
        _validate_omega(arr)
        (x0, x1), (y0, y1) = arr
        i0, i1 = round(x0 * n), round(x1 * n)
        j0, j1 = round(y0 * n), round(y1 * n)
        if i0 == i1 or j0 == j1:
            raise MeshError(f"n={n} cannot separate the damped rectangle {omega}: a side snaps to zero width")
        if min(i0, j0) < 1 or max(i1, j1) > n - 1:
            raise MeshError(f"damped rectangle {omega} touches the outer boundary after snapping")
        centroids = nodes[elements].mean(axis=1)
        inside = ((centroids[:, 0] > i0 / n) & (centroids[:, 0] < i1 / n)
                  & (centroids[:, 1] > j0 / n) & (centroids[:, 1] < j1 / n))
        region = np.where(inside, Region.DAMPED, Region.ELASTIC).astype(np.int8)
        facets = []
        for i in range(i0, i1):          # horizontal runs, bottom and top
            facets.append((nid(i, j0), nid(i + 1, j0)))
            facets.append((nid(i, j1), nid(i + 1, j1)))
        for j in range(j0, j1):          # vertical runs, left and right
            facets.append((nid(i0, j), nid(i0, j + 1)))
            facets.append((nid(i1, j), nid(i1, j + 1)))
        ifacets = np.array(sorted(facets), dtype=int)

    mesh = Mesh(dim=2, nodes=nodes, elements=elements, element_region=region,
                boundary_nodes=boundary, interface_facets=ifacets, h=h)
    _check_damped_interior(mesh, full=omega is None)
    return mesh


def _check_damped_interior(mesh: Mesh, full: bool) -> None:
    # Damped region strictly interior: no node of a damped element on the
    # outer boundary.  Waived for the deliberately fully-damped test meshes.
    if full:
        return
    damped_els = mesh.elements[mesh.element_region == Region.DAMPED]
    if damped_els.size and np.intersect1d(damped_els.ravel(), mesh.boundary_nodes).size:
        raise MeshError("damped region touches the outer boundary")


def damped_nodes(mesh: Mesh) -> np.ndarray:
    """Node indices belonging to at least one damped element."""
    els = mesh.elements[mesh.element_region == Region.DAMPED]
    return np.unique(els.ravel())


def elastic_nodes(mesh: Mesh) -> np.ndarray:
    els = mesh.elements[mesh.element_region == Region.ELASTIC]
    return np.unique(els.ravel())


def interface_nodes(mesh: Mesh) -> np.ndarray:
    return np.unique(mesh.interface_facets.ravel()) if mesh.interface_facets.size \
        else np.empty(0, dtype=int)


def interior_nodes(mesh: Mesh) -> np.ndarray:
    """Nodes not on the outer boundary, in increasing index order."""
    return np.setdiff1d(np.arange(mesh.n_nodes), mesh.boundary_nodes)


def element_measures(mesh: Mesh) -> np.ndarray:
    """Length (1D) or area (2D) of every element."""
    pts = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        return np.abs(pts[:, 1] - pts[:, 0])
    d1 = pts[:, 1] - pts[:, 0]
    d2 = pts[:, 2] - pts[:, 0]
    return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def damped_measure(mesh: Mesh) -> float:
    """Total measure of the damped region (exact, by interface alignment)."""
    return float(element_measures(mesh)[mesh.element_region == Region.DAMPED].sum())


def dump_mesh(mesh: Mesh) -> str:
    """Plain-text node/element/region listing, one record per line."""
    lines = [f"dim {mesh.dim}", f"nodes {mesh.n_nodes}"]
    if mesh.dim == 1:
        lines += [f"n {i} {x:.17g}" for i, x in enumerate(mesh.nodes)]
    else:
        lines += [f"n {i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes)]
    lines.append(f"elements {mesh.n_elements}")
    for i, (el, reg) in enumerate(zip(mesh.elements, mesh.element_region)):
        tag = "DAMPED" if reg == Region.DAMPED else "ELASTIC"
        lines.append("e {} {} {}".format(i, " ".join(str(v) for v in el), tag))
    lines.append("boundary " + " ".join(str(v) for v in mesh.boundary_nodes))
    for f in mesh.interface_facets:
        lines.append("interface " + " ".join(str(v) for v in f))
    return "\n".join(lines) + "\n"
