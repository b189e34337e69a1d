"""Finite element operators for the damped wave system.

Continuous piecewise-linear elements on the meshes from :mod:`.geometry`.
The assembled set holds the mass matrix M, the stiffness matrix K, the
damping stiffness D (``d`` times the stiffness restricted to damped
elements) and the block-diagonal energy Gram G = diag(K, M), all with the
homogeneous Dirichlet condition built in by eliminating boundary rows and
columns.  Element integrals of piecewise-linear products are evaluated in
closed form, which is exact.

The first-order generator acts on states z = (u, v) as
``z -> (v, -M^{-1}(K u + D v))`` and is never formed as a matrix; M and K
are factorized once and the solves are reused everywhere.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DampingField, Mesh, Region, interior_nodes

__all__ = [
    "AssemblyError",
    "OperatorSet",
    "State",
    "assemble_operators",
    "assemble_region_matrices",
    "apply_generator",
    "solve_generator",
    "energy",
    "h_norm",
    "make_dAk_data",
    "random_state",
    "export_coo",
]


class AssemblyError(ValueError):
    """Raised when mesh and damping field do not describe the same setup."""


@dataclass
class State:
    """Energy-space state: displacement coefficients u, velocity v.

    Real for time evolution, complex for resolvent solves.
    """

    u: np.ndarray
    v: np.ndarray

    def copy(self) -> "State":
        return State(self.u.copy(), self.v.copy())

    @property
    def n(self) -> int:
        return self.u.shape[0]


class _Factor:
    """Sparse LU of a real matrix with reentrant, complex-aware solves."""

    def __init__(self, matrix: sp.spmatrix):
        self._lu = spla.splu(matrix.tocsc())
        self._lock = threading.Lock()

    def solve(self, b: np.ndarray) -> np.ndarray:
        with self._lock:
            if np.iscomplexobj(b):
                return self._lu.solve(b.real) + 1j * self._lu.solve(b.imag)
            return self._lu.solve(b)


class OperatorSet:
    """Assembled operators on the interior (Dirichlet-eliminated) nodes."""

    def __init__(self, mesh: Mesh, damping: DampingField,
                 M: sp.csr_matrix, K: sp.csr_matrix, D: sp.csr_matrix):
        self.mesh = mesh
        self.damping = damping
        self.M = M
        self.K = K
        self.D = D
        self.G = sp.block_diag([K, M], format="csr")
        self.n_dof = M.shape[0]
        self.interior = interior_nodes(mesh)
        self._m_factor: _Factor | None = None
        self._k_factor: _Factor | None = None
        self._factor_lock = threading.Lock()

    @property
    def h(self) -> float:
        return self.mesh.h

    def solve_mass(self, b: np.ndarray) -> np.ndarray:
        with self._factor_lock:
            if self._m_factor is None:
                self._m_factor = _Factor(self.M)
        return self._m_factor.solve(b)

    def solve_stiffness(self, b: np.ndarray) -> np.ndarray:
        with self._factor_lock:
            if self._k_factor is None:
                self._k_factor = _Factor(self.K)
        return self._k_factor.solve(b)


def _local_matrices_1d(length: float):
    k = np.array([[1.0, -1.0], [-1.0, 1.0]]) / length
    m = length / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return k, m


def _local_matrices_tri(pts: np.ndarray):
    # P1 triangle: gradients of barycentric coordinates give the stiffness,
    # the consistent mass is area/12 * (ones + eye).
    d1 = pts[1] - pts[0]
    d2 = pts[2] - pts[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    area = 0.5 * abs(det)
    # rows: grad of each barycentric function
    g = np.array([
        [pts[1][1] - pts[2][1], pts[2][0] - pts[1][0]],
        [pts[2][1] - pts[0][1], pts[0][0] - pts[2][0]],
        [pts[0][1] - pts[1][1], pts[1][0] - pts[0][0]],
    ]) / det
    k = area * (g @ g.T)
    m = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
    return k, m


def assemble_region_matrices(mesh: Mesh, region: Region | None = None):
    """Stiffness and mass on the full node set, summed over selected elements.

    ``region=None`` assembles over every element.  No boundary condition is
    applied; callers slice the rows/columns they need.
    """
    if region is None:
        sel = np.arange(mesh.n_elements)
    else:
        sel = np.flatnonzero(mesh.element_region == region)
    nv = mesh.elements.shape[1]
    rows, cols, kvals, mvals = [], [], [], []
    for e in sel:
        el = mesh.elements[e]
        if mesh.dim == 1:
            x = mesh.nodes[el]
            k, m = _local_matrices_1d(abs(x[1] - x[0]))
        else:
            k, m = _local_matrices_tri(mesh.nodes[el])
        for a in range(nv):
            for b in range(nv):
                rows.append(el[a])
                cols.append(el[b])
                kvals.append(k[a, b])
                mvals.append(m[a, b])
    shape = (mesh.n_nodes, mesh.n_nodes)
    K = sp.coo_matrix((kvals, (rows, cols)), shape=shape).tocsr()
    M = sp.coo_matrix((mvals, (rows, cols)), shape=shape).tocsr()
    return K, M


def _expected_region_tags(mesh: Mesh, damping: DampingField) -> np.ndarray:
    if damping.full_domain:
        return np.full(mesh.n_elements, Region.DAMPED, dtype=np.int8)
    centers = mesh.nodes[mesh.elements].mean(axis=1)
    if mesh.dim == 1:
        a, b = damping.omega
        n = mesh.n_elements
        a, b = round(a * n) / n, round(b * n) / n
        inside = (centers > a) & (centers < b)
    else:
        (x0, x1), (y0, y1) = damping.omega
        n = int(round(1.0 / (mesh.h / np.sqrt(2.0))))
        x0, x1 = round(x0 * n) / n, round(x1 * n) / n
        y0, y1 = round(y0 * n) / n, round(y1 * n) / n
        inside = ((centers[:, 0] > x0) & (centers[:, 0] < x1)
                  & (centers[:, 1] > y0) & (centers[:, 1] < y1))
    return np.where(inside, Region.DAMPED, Region.ELASTIC).astype(np.int8)


def assemble_operators(mesh: Mesh, damping: DampingField) -> OperatorSet:
    """Assemble M, K, D and the energy Gram for a mesh/damping pair.

    The damping stiffness is ``d`` times the stiffness assembled over damped
    elements only, so its kernel contains every nodal function supported
    outside the damped region.  Raises :class:`AssemblyError` when the mesh
    region tags disagree with the damping descriptor.
    """
    expected = _expected_region_tags(mesh, damping)
    if not np.array_equal(expected, mesh.element_region):
        raise AssemblyError("mesh region tags do not match the damping field descriptor")

    K_full, M_full = assemble_region_matrices(mesh)
    Kd_full, _ = assemble_region_matrices(mesh, Region.DAMPED)
    idx = interior_nodes(mesh)
    K = K_full[np.ix_(idx, idx)].tocsr()
    M = M_full[np.ix_(idx, idx)].tocsr()
    D = (damping.d * Kd_full[np.ix_(idx, idx)]).tocsr()
    return OperatorSet(mesh, damping, M=M, K=K, D=D)


def apply_generator(ops: OperatorSet, z: State) -> State:
    """Action of the generator: (u, v) -> (v, -M^{-1}(K u + D v))."""
    _check_dims(ops, z)
    return State(z.v.copy(), -ops.solve_mass(ops.K @ z.u + ops.D @ z.v))


def solve_generator(ops: OperatorSet, rhs: State) -> State:
    """Solve A z = rhs: z = (-K^{-1}(M g + D f), f) for rhs = (f, g)."""
    _check_dims(ops, rhs)
    u = -ops.solve_stiffness(ops.M @ rhs.v + ops.D @ rhs.u)
    return State(u, rhs.u.copy())


def energy(ops: OperatorSet, z: State) -> float:
    """Natural energy: half the squared energy norm of (u, v)."""
    _check_dims(ops, z)
    return 0.5 * h_norm(ops, z) ** 2


def h_norm(ops: OperatorSet, z: State) -> float:
    """Energy norm: sqrt(u* K u + v* M v), conjugate pairing for complex z."""
    qu = np.vdot(z.u, ops.K @ z.u).real
    qv = np.vdot(z.v, ops.M @ z.v).real
    return float(np.sqrt(max(qu + qv, 0.0)))


def random_state(ops: OperatorSet, seed: int, complex_data: bool = False,
                 normalize: bool = True) -> State:
    """Random state, by default scaled to unit energy norm."""
    rng = np.random.default_rng(seed)
    shape = (ops.n_dof,)
    if complex_data:
        u = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    else:
        u = rng.standard_normal(shape)
        v = rng.standard_normal(shape)
    z = State(u, v)
    if normalize:
        nrm = h_norm(ops, z)
        z = State(u / nrm, v / nrm)
    return z


def make_dAk_data(ops: OperatorSet, k: int, seed: int) -> tuple[State, float]:
    """Smooth initial data by inverse iteration, with its graph norm.

    Draws a random unit-energy state y and returns z with A^k z = y, together
    with ``sqrt(sum_{j=0..k} |A^j z|_H^2)``.  The generator is invertible on
    the discrete space for any d >= 0, so the solves are direct.
    """
    if not 0 <= k <= 4:
        raise ValueError(f"k must be between 0 and 4, got {k}")
    z = random_state(ops, seed)
    for _ in range(k):
        z = solve_generator(ops, z)
    total = 0.0
    w = z
    for j in range(k + 1):
        total += h_norm(ops, w) ** 2
        if j < k:
            w = apply_generator(ops, w)
    return z, float(np.sqrt(total))


def export_coo(matrix: sp.spmatrix, path) -> None:
    """Write a matrix as plain-text (row, col, value) triplets."""
    coo = matrix.tocoo()
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def _check_dims(ops: OperatorSet, z: State) -> None:
    if z.u.shape != (ops.n_dof,) or z.v.shape != (ops.n_dof,):
        raise ValueError(
            f"state dimensions {z.u.shape}/{z.v.shape} do not match n_dof={ops.n_dof}")
