"""Resolvent solves along the imaginary axis and the transmission cross-check.

Everything here revolves around the shifted problem (A - i*mu) z = (f, g).
Eliminating the velocity turns it into one complex sparse solve with
S_mu = K + i*mu*D - mu^2*M, and the resolvent norm is measured in the energy
inner product: with G = C' C (Cholesky of the block Gram), the operator norm
of the resolvent is 1/sigma_min(C (A - i*mu) C^{-1}) -- computed by dense SVD
at desk scale, or by a Lanczos pass on the inverse (an inverse iteration on
the normal equations) for larger problems.

The same shifted problem is solved a second, independent way: restricted to
the damped and undamped subdomains it becomes two Helmholtz equations coupled
through the interface, with the material jump appearing as an interface datum
proportional to the damped-side trace.  Substituting the datum turns the
coupling into a fixed column scaling plus a right-hand-side lift, so the
coupled system is solved by direct elimination and the reconstruction is an
exact algebraic cross-check of the monolithic path.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (OperatorSet, State, assemble_region_matrices, h_norm)
from .geometry import (DampingField, Mesh, Region, damped_nodes, elastic_nodes,
                       interface_nodes, interior_nodes)

__all__ = [
    "SolveError",
    "ResolutionError",
    "ResolventScan",
    "TransmissionState",
    "HelmholtzReport",
    "DissipationFit",
    "resolvent_norm",
    "scan_resolvent",
    "monolithic_resolvent_solve",
    "solve_transmission",
    "reconstruct_state",
    "flux_jump",
    "transmission_equivalence",
    "helmholtz_h1_check",
    "fit_interface_dissipation",
]

MU_H_LIMIT = 0.6            # ten-nodes-per-wavelength rule
SINGULAR_SIGMA = 1e-13


class SolveError(RuntimeError):
    """Raised when a resolvent-type solve fails its residual contract."""


class ResolutionError(ValueError):
    """Raised when a scan requests frequencies the mesh cannot resolve."""


@dataclass
class ResolventScan:
    """Norm samples along the imaginary axis with their affine envelope.

    ``fit = (C1, C2)`` is the least-squares envelope of ln(norm): the line
    C1 + C2*|mu| lying above every finite sample.  ``growth_exponent`` is
    the slope of a log-log fit over mu >= 1, reported as the empirical
    polynomial growth rate (no claimed upper-bound meaning).
    """

    mu_values: np.ndarray
    norms: np.ndarray
    flags: list[str]
    fit: tuple[float, float]
    growth_exponent: float


@dataclass
class TransmissionState:
    """Two-sided Helmholtz solution with its interface datum.

    ``w1``/``w2`` are complex nodal fields indexed by ``nodes1``/``nodes2``
    (damped-side and elastic-side node sets, both including the interface);
    ``phi`` is the interface jump w1 - w2 on ``inodes``.
    """

    nodes1: np.ndarray
    w1: np.ndarray
    nodes2: np.ndarray
    w2: np.ndarray
    inodes: np.ndarray
    phi: np.ndarray
    mu: float
    d: float


@dataclass
class HelmholtzReport:
    mu: float
    ratios: np.ndarray
    max_ratio: float
    n_skipped: int


@dataclass
class DissipationFit:
    c_fit: float
    mu_values: np.ndarray
    max_ratio_per_mu: np.ndarray


# -- energy-norm machinery ---------------------------------------------------

class _EnergyFrame:
    """Cholesky factors of the Gram blocks and the congruence helpers."""

    def __init__(self, ops: OperatorSet):
        self.ops = ops
        self.Lk = sla.cholesky(ops.K.toarray(), lower=True)
        self.Lm = sla.cholesky(ops.M.toarray(), lower=True)

    def weighted_matrix(self, mu: float) -> np.ndarray:
        """Dense T = C (A - i*mu) C^{-1} with C = blkdiag(Lk', Lm')."""
        ops, Lk, Lm = self.ops, self.Lk, self.Lm
        n = ops.n_dof
        eye = np.eye(n)
        T12 = sla.solve_triangular(Lm, Lk, lower=True).T
        T21 = -sla.solve_triangular(
            Lm, sla.solve_triangular(Lk, ops.K.toarray(), lower=True).T, lower=True)
        T22 = -sla.solve_triangular(
            Lm, sla.solve_triangular(Lm, ops.D.toarray(), lower=True).T, lower=True)
        T = np.block([[np.zeros((n, n)), T12], [T21, T22]]).astype(complex)
        T[:n, :n] -= 1j * mu * eye
        T[n:, n:] -= 1j * mu * eye
        return T

    def to_weighted(self, z: State) -> np.ndarray:
        return np.concatenate([self.Lk.T @ z.u, self.Lm.T @ z.v])

    def from_weighted(self, x: np.ndarray) -> State:
        n = self.ops.n_dof
        u = sla.solve_triangular(self.Lk, x[:n], lower=True, trans="T")
        v = sla.solve_triangular(self.Lm, x[n:], lower=True, trans="T")
        return State(u, v)


def _system_matrix(ops: OperatorSet, mu: float) -> sp.csc_matrix:
    return (ops.K + 1j * mu * ops.D - mu * mu * ops.M).astype(complex).tocsc()


def monolithic_resolvent_solve(ops: OperatorSet, mu: float, f: np.ndarray,
                               g: np.ndarray) -> State:
    """Solve (A - i*mu)(u, v) = (f, g) by velocity elimination.

    One complex sparse solve with K + i*mu*D - mu^2*M; the result is
    residual-checked in the energy norm (1e-10 relative) and a failure is
    reported instead of returned.
    """
    f = np.asarray(f, dtype=complex)
    g = np.asarray(g, dtype=complex)
    data = State(f, g)
    data_norm = h_norm(ops, data)
    if data_norm == 0.0:
        return State(np.zeros(ops.n_dof, complex), np.zeros(ops.n_dof, complex))
    rhs = -(ops.M @ g) - 1j * mu * (ops.M @ f) - ops.D @ f
    try:
        u = spla.splu(_system_matrix(ops, mu)).solve(rhs)
    except RuntimeError as exc:
        raise SolveError(f"shifted system at mu={mu} is singular: {exc}") from exc
    v = f + 1j * mu * u
    # residual of (A - i mu) z - (f, g) in the energy norm
    res_u = v - 1j * mu * u - f
    res_v = -ops.solve_mass(ops.K @ u + ops.D @ v) - 1j * mu * v - g
    rel = h_norm(ops, State(res_u, res_v)) / data_norm
    if rel > 1e-10:
        raise SolveError(
            f"resolvent solve at mu={mu} missed its residual contract: {rel:.3e} "
            "(mu is likely pinned on an undamped eigenvalue)")
    return State(u, v)


def resolvent_norm(ops: OperatorSet, mu: float, *, method: str = "dense-svd",
                   _frame: _EnergyFrame | None = None) -> float:
    """Operator norm of (A - i*mu)^{-1} in the energy inner product.

    ``dense-svd`` computes the full singular spectrum of the weighted matrix;
    ``inverse-iteration`` runs a one-vector Lanczos pass (scipy ``svds``) on
    the inverse, touching only sparse factorizations.  An eigenvalue hit is
    reported as inf.
    """
    frame = _frame or _EnergyFrame(ops)
    if method == "dense-svd":
        svals = sla.svdvals(frame.weighted_matrix(mu))
        if svals[-1] < SINGULAR_SIGMA * svals[0]:
            return float("inf")
        return float(1.0 / svals[-1])
    if method == "inverse-iteration":
        return _norm_by_inverse_iteration(ops, frame, mu)
    raise ValueError(f"unknown method {method!r}")


def _norm_by_inverse_iteration(ops: OperatorSet, frame: _EnergyFrame,
                               mu: float) -> float:
    n = ops.n_dof
    try:
        lu = spla.splu(_system_matrix(ops, mu))
    except RuntimeError:
        return float("inf")
    M, K, D = ops.M, ops.K, ops.D
    Lk, Lm = frame.Lk, frame.Lm

    def matvec(x):
        a = sla.solve_triangular(Lk, x[:n], lower=True, trans="T")
        b = sla.solve_triangular(Lm, x[n:], lower=True, trans="T")
        rhs = -(M @ b) - 1j * mu * (M @ a) - D @ a
        u = lu.solve(rhs)
        v = a + 1j * mu * u
        return np.concatenate([Lk.T @ u, Lm.T @ v])

    def rmatvec(y):
        x1 = Lk @ y[:n]
        x2 = Lm @ y[n:]
        if mu == 0.0:
            p = -ops.solve_stiffness(x1)
            z1 = x2 + D @ p
        else:
            r = 1j * mu * x2 - x1
            p = np.conj(lu.solve(np.conj(r)))
            z1 = (x1 + K @ p) / (1j * mu)
        z2 = M @ p
        return np.concatenate([
            sla.solve_triangular(Lk, z1, lower=True),
            sla.solve_triangular(Lm, z2, lower=True)])

    op = spla.LinearOperator((2 * n, 2 * n), matvec=matvec, rmatvec=rmatvec,
                             dtype=complex)
    v0 = np.full(2 * n, 1.0 + 0.5j)
    smax = spla.svds(op, k=1, which="LM", v0=v0, return_singular_vectors=False,
                     maxiter=5000)
    return float(smax[0])


def _fit_envelope(mu_abs: np.ndarray, lognorms: np.ndarray) -> tuple[float, float]:
    """Least-squares affine upper envelope: slack >= 0 at every sample."""
    if len(np.unique(mu_abs)) < 2:
        return float(lognorms.max()), 0.0
    # start from the least-squares line shifted up to cover all points
    slope, icept = np.polyfit(mu_abs, lognorms, 1)
    icept += np.max(lognorms - (icept + slope * mu_abs))

    def cost(p):
        s = p[0] + p[1] * mu_abs - lognorms
        return float(s @ s)

    cons = [{"type": "ineq", "fun": lambda p, m=m, y=y: p[0] + p[1] * m - y}
            for m, y in zip(mu_abs, lognorms)]
    res = scipy.optimize.minimize(cost, x0=[icept, slope], constraints=cons,
                                  method="SLSQP",
                                  options={"maxiter": 200, "ftol": 1e-12})
    c1, c2 = (res.x if res.success else (icept, slope))
    # never report a line that dips below a sample
    c1 += max(0.0, np.max(lognorms - (c1 + c2 * mu_abs)))
    return float(c1), float(c2)


def scan_resolvent(ops: OperatorSet, mu_grid, *, method: str = "dense-svd",
                   jobs: int = 1) -> ResolventScan:
    """Sample the resolvent norm over a frequency grid and fit the envelope.

    Enforces the mesh-resolution rule mu*h <= 0.6 on every requested
    frequency.  Infinite samples (eigenvalue hits, only possible without
    damping) are flagged and excluded from the fit.
    """
    mu_values = np.asarray(list(mu_grid), dtype=float)
    if mu_values.size == 0:
        raise ValueError("empty frequency grid")
    if len(np.unique(mu_values)) != len(mu_values):
        raise ValueError("frequency grid values must be distinct")
    worst = np.abs(mu_values).max() * ops.h
    if worst > MU_H_LIMIT:
        raise ResolutionError(
            f"max |mu|*h = {worst:.3g} exceeds {MU_H_LIMIT}; refine the mesh "
            "or trim the grid")
    frame = _EnergyFrame(ops)

    def one(mu):
        return resolvent_norm(ops, mu, method=method, _frame=frame)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            norms = np.array(list(ex.map(one, mu_values)))
    else:
        norms = np.array([one(mu) for mu in mu_values])
    flags = ["" if np.isfinite(v) else "eigenvalue-hit" for v in norms]
    finite = np.isfinite(norms)
    if not finite.any():
        raise SolveError("every sample hit an eigenvalue; nothing to fit")
    c1, c2 = _fit_envelope(np.abs(mu_values[finite]), np.log(norms[finite]))
    grow = finite & (np.abs(mu_values) >= 1.0)
    if grow.sum() >= 2:
        expo = float(np.polyfit(np.log(np.abs(mu_values[grow])),
                                np.log(norms[grow]), 1)[0])
    else:
        expo = float("nan")
    return ResolventScan(mu_values=mu_values, norms=norms, flags=flags,
                         fit=(c1, c2), growth_exponent=expo)


# -- transmission reformulation ----------------------------------------------

class TransmissionError(RuntimeError):
    """Raised when the coupled interface system cannot be solved."""


def solve_transmission(mesh: Mesh, damping: DampingField, mu: float,
                       f: np.ndarray, g: np.ndarray) -> TransmissionState:
    """Solve the two-sided Helmholtz reformulation of the shifted problem.

    On the damped side the unknown is w1 with Delta w1 + mu^2/(1+i d mu) w1
    given by the shifted data; outside it is w2 with the plain Helmholtz
    operator, w2 = 0 on the outer boundary, continuous flux across the
    interface and the jump w1 - w2 prescribed by the interface datum.  The
    datum depends affinely on the damped-side solution, which pins the
    interface values to w1 = (1+i d mu) w2 + d f there; that constraint is
    eliminated directly (a column scaling plus a right-hand-side lift), so no
    iteration is involved.
    """
    if not mesh.interface_facets.size:
        raise TransmissionError("mesh has no interface; transmission form needs one")
    d = damping.d
    denom = 1.0 + 1j * d * mu
    c1 = mu * mu / denom

    K1, M1 = assemble_region_matrices(mesh, Region.DAMPED)
    K2, M2 = assemble_region_matrices(mesh, Region.ELASTIC)
    idx = interior_nodes(mesh)
    inodes = interface_nodes(mesh)
    n_all = mesh.n_nodes

    f_full = np.zeros(n_all, complex)
    g_full = np.zeros(n_all, complex)
    f_full[idx] = f
    g_full[idx] = g
    phi1 = g_full + (1j * mu / denom) * f_full
    phi2 = g_full + 1j * mu * f_full

    scale = np.ones(n_all, complex)
    scale[inodes] = denom
    lift = np.zeros(n_all, complex)
    lift[inodes] = d * f_full[inodes]

    A_full = (K1 - c1 * M1).multiply(scale[None, :]) + (K2 - mu * mu * M2)
    b_full = -(M1 @ phi1) - (M2 @ phi2) - (K1 - c1 * M1) @ lift
    try:
        X = spla.splu(A_full[np.ix_(idx, idx)].tocsc()).solve(b_full[idx])
    except RuntimeError as exc:
        raise TransmissionError(f"coupled interface system is singular: {exc}") from exc

    X_full = np.zeros(n_all, complex)
    X_full[idx] = X
    nodes1 = damped_nodes(mesh)
    nodes2 = elastic_nodes(mesh)
    w1_full = scale * X_full + lift
    w1 = w1_full[nodes1]
    w2 = X_full[nodes2]
    phi = w1_full[inodes] - X_full[inodes]
    return TransmissionState(nodes1=nodes1, w1=w1, nodes2=nodes2, w2=w2,
                             inodes=inodes, phi=phi, mu=mu, d=d)


def reconstruct_state(ts: TransmissionState, mesh: Mesh, f: np.ndarray) -> State:
    """Recover the monolithic unknowns (u, v) from the two-sided solution."""
    n_all = mesh.n_nodes
    idx = interior_nodes(mesh)
    f_full = np.zeros(n_all, complex)
    f_full[idx] = f
    denom = 1.0 + 1j * ts.d * ts.mu
    u_full = np.zeros(n_all, complex)
    u_full[ts.nodes1] = (ts.w1 - ts.d * f_full[ts.nodes1]) / denom
    u_full[ts.nodes2] = ts.w2          # interface: both sides agree by construction
    u = u_full[idx]
    v = f + 1j * ts.mu * u
    return State(u, v)


def flux_jump(ts: TransmissionState, mesh: Mesh, f: np.ndarray,
              g: np.ndarray) -> float:
    """Scaled discrete normal-flux jump across the interface.

    Each side's weak flux at an interface node is the subdomain equation
    residual tested with that node's hat function; their sum is the jump.
    """
    d, mu = ts.d, ts.mu
    denom = 1.0 + 1j * d * mu
    c1 = mu * mu / denom
    K1, M1 = assemble_region_matrices(mesh, Region.DAMPED)
    K2, M2 = assemble_region_matrices(mesh, Region.ELASTIC)
    n_all = mesh.n_nodes
    idx = interior_nodes(mesh)
    f_full = np.zeros(n_all, complex)
    g_full = np.zeros(n_all, complex)
    f_full[idx] = f
    g_full[idx] = g
    w1_full = np.zeros(n_all, complex)
    w2_full = np.zeros(n_all, complex)
    w1_full[ts.nodes1] = ts.w1
    w2_full[ts.nodes2] = ts.w2
    flux1 = (K1 - c1 * M1) @ w1_full + M1 @ (g_full + (1j * mu / denom) * f_full)
    flux2 = (K2 - mu * mu * M2) @ w2_full + M2 @ (g_full + 1j * mu * f_full)
    jump = np.abs(flux1[ts.inodes] + flux2[ts.inodes]).max()
    scale = max(np.abs(flux1[ts.inodes]).max(), np.abs(flux2[ts.inodes]).max(), 1e-300)
    return float(jump / scale)


def transmission_equivalence(ops: OperatorSet, mesh: Mesh, damping: DampingField,
                             mu: float, f: np.ndarray, g: np.ndarray) -> float:
    """Energy-norm relative gap between the monolithic and two-sided solves."""
    zm = monolithic_resolvent_solve(ops, mu, f, g)
    ts = solve_transmission(mesh, damping, mu, f, g)
    zt = reconstruct_state(ts, mesh, np.asarray(f, dtype=complex))
    diff = State(zm.u - zt.u, zm.v - zt.v)
    ref = h_norm(ops, zm)
    if ref == 0.0:
        return 0.0 if h_norm(ops, diff) == 0.0 else float("inf")
    return h_norm(ops, diff) / ref


# -- Helmholtz lemma check ----------------------------------------------------

def _random_smooth_field(points: np.ndarray, rng: np.random.Generator,
                         n_modes: int = 8) -> np.ndarray:
    """Random low-frequency trig field, statistically mesh-independent."""
    pts = points[:, None] if points.ndim == 1 else points
    lo = pts.min(axis=0)
    span = np.maximum(pts.max(axis=0) - lo, 1e-12)
    xi = (pts - lo) / span
    out = np.zeros(len(pts), dtype=complex)
    for m in range(1, n_modes + 1):
        amp = 1.0 / (1.0 + m * m)
        for k in range(pts.shape[1]):
            c = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            out += amp * (c[0] * np.sin(np.pi * m * xi[:, k])
                          + c[1] * np.cos(np.pi * m * xi[:, k]))
    return out


def helmholtz_h1_check(mesh: Mesh, mu: float, trials: int, *, d: float = 1.0,
                       seed: int = 0, mu_floor: float = 10.0) -> HelmholtzReport:
    """Observe the H1-vs-(gradient + datum) ratio on the damped subdomain.

    Solves Delta w + mu^2/(1+i d mu) w = F on the damped subdomain for random
    smooth F and random interface boundary values, and reports the max of
    |w|_H1^2 / (|grad w|^2 + |F|^2) over the draws.  Degenerate all-zero
    draws are skipped.
    """
    if abs(mu) <= mu_floor:
        raise ValueError(f"|mu| must exceed {mu_floor}, got {mu}")
    sub_nodes = damped_nodes(mesh)
    if sub_nodes.size == 0:
        raise ValueError("mesh has no damped subdomain")
    K1, M1 = assemble_region_matrices(mesh, Region.DAMPED)
    K_O = K1[np.ix_(sub_nodes, sub_nodes)].tocsr()
    M_O = M1[np.ix_(sub_nodes, sub_nodes)].tocsr()
    bnd = np.flatnonzero(np.isin(sub_nodes, interface_nodes(mesh)))
    inner = np.setdiff1d(np.arange(sub_nodes.size), bnd)
    c = mu * mu / (1.0 + 1j * d * mu)
    A = (K_O - c * M_O).tocsc()
    lu = spla.splu(A[np.ix_(inner, inner)].tocsc())
    A_ib = A[np.ix_(inner, bnd)]

    rng = np.random.default_rng(seed)
    pts = mesh.nodes[sub_nodes]
    ratios = []
    skipped = 0
    for _ in range(trials):
        F = _random_smooth_field(pts, rng)
        wb = rng.standard_normal(len(bnd)) + 1j * rng.standard_normal(len(bnd))
        w = np.zeros(sub_nodes.size, complex)
        w[bnd] = wb
        rhs = -(M_O @ F)[inner] - A_ib @ wb
        w[inner] = lu.solve(rhs)
        grad2 = np.vdot(w, K_O @ w).real
        mass2 = np.vdot(w, M_O @ w).real
        datum2 = np.vdot(F, M_O @ F).real
        denom = grad2 + datum2
        if denom <= 0.0:
            skipped += 1
            continue
        ratios.append((mass2 + grad2) / denom)
    ratios = np.array(ratios)
    return HelmholtzReport(mu=mu, ratios=ratios,
                           max_ratio=float(ratios.max(initial=0.0)),
                           n_skipped=skipped)


# -- interface-dissipation inequality -----------------------------------------

def fit_interface_dissipation(ops: OperatorSet, mu_values, n_rhs: int,
                              seed: int = 0) -> DissipationFit:
    """Fit one constant bounding d|mu| |grad u|^2_omega by the data terms.

    For each frequency and random right-hand side, the observed ratio is
    |mu| u* D u / (mu^2 |grad f|^2 + |g|^2); the fitted constant is the max
    over the whole test set, and the per-frequency maxima expose any growth
    trend in mu.
    """
    mu_values = np.asarray(list(mu_values), dtype=float)
    rng = np.random.default_rng(seed)
    per_mu = np.zeros(len(mu_values))
    for i, mu in enumerate(mu_values):
        lu = spla.splu(_system_matrix(ops, mu))
        worst = 0.0
        for _ in range(n_rhs):
            f = rng.standard_normal(ops.n_dof) + 1j * rng.standard_normal(ops.n_dof)
            g = rng.standard_normal(ops.n_dof) + 1j * rng.standard_normal(ops.n_dof)
            u = lu.solve(-(ops.M @ g) - 1j * mu * (ops.M @ f) - ops.D @ f)
            lhs = abs(mu) * np.vdot(u, ops.D @ u).real
            rhs = mu * mu * np.vdot(f, ops.K @ f).real + np.vdot(g, ops.M @ g).real
            worst = max(worst, lhs / rhs)
        per_mu[i] = worst
    return DissipationFit(c_fit=float(per_mu.max()), mu_values=mu_values,
                          max_ratio_per_mu=per_mu)
