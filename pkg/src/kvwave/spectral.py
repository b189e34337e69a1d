"""Spectrum of the damped generator via the quadratic pencil.

Eigenvalues solve (lambda^2 M + lambda D + K) x = 0.  The pencil is
linearized with companion blocks [[0, I], [-K, -D]] against [[I, 0], [0, M]]
and solved densely (QZ); M is never inverted.  Every eigenpair is
back-checked on the quadratic pencil and tagged untrusted when the scaled
residual is poor instead of failing the run: badly resolved high-frequency
pairs are discretization artifacts and must not poison the statistics.

Band statistics group eigenvalues by |Im lambda| into dyadic bands and track
the per-band spectral abscissa; damping localized away from the boundary
shows the abscissa creeping toward zero with frequency, while full damping
keeps it pinned near -1/d.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import OperatorSet

__all__ = [
    "QEPSizeError",
    "Spectrum",
    "BandStat",
    "BandReport",
    "StabilityReport",
    "solve_qep",
    "solve_qep_near",
    "band_abscissa",
    "verify_strong_stability",
    "undamped_frequencies",
]

MAX_DENSE_DOF = 2000
TRUST_TOL = 1e-6


class QEPSizeError(ValueError):
    """Dense solve requested beyond the desk-scale size limit."""


@dataclass
class Spectrum:
    """Eigenvalues of the quadratic pencil with per-pair residuals."""

    eigenvalues: np.ndarray
    residuals: np.ndarray
    trusted: np.ndarray
    n_dof: int
    d: float
    omega: tuple | None
    h: float

    @property
    def trusted_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.trusted]

    def __len__(self) -> int:
        return len(self.eigenvalues)


@dataclass
class BandStat:
    lo: float
    hi: float
    abscissa: float | None
    count: int


@dataclass
class BandReport:
    bands: list[BandStat]
    trend: bool
    im_cutoff: float


@dataclass
class StabilityReport:
    passed: bool
    offenders: np.ndarray
    note: str = ""


def _pencil_residuals(ops: OperatorSet, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    nK = float(abs(ops.K).sum(axis=1).max())
    nM = float(abs(ops.M).sum(axis=1).max())
    nD = float(abs(ops.D).sum(axis=1).max()) if ops.D.nnz else 0.0
    R = ops.K @ X + (ops.D @ X) * w + (ops.M @ X) * w**2
    scale = nK + np.abs(w) * nD + np.abs(w) ** 2 * nM
    xnorm = np.linalg.norm(X, axis=0)
    bad = xnorm < 1e-12
    res = np.linalg.norm(R, axis=0) / (scale * np.where(bad, 1.0, xnorm))
    res[bad] = np.inf
    res[~np.isfinite(w)] = np.inf
    return res


def solve_qep(ops: OperatorSet, trust_tol: float = TRUST_TOL) -> Spectrum:
    """Dense solve of the full quadratic eigenvalue problem.

    Returns all 2*n_dof eigenvalues sorted by (Im, Re); pairs whose scaled
    pencil residual exceeds ``trust_tol`` are kept but marked untrusted.
    """
    n = ops.n_dof
    if n > MAX_DENSE_DOF:
        raise QEPSizeError(f"n_dof={n} exceeds dense desk-scale limit {MAX_DENSE_DOF}")
    Z = np.zeros((n, n))
    A = np.block([[Z, np.eye(n)], [-ops.K.toarray(), -ops.D.toarray()]])
    B = np.block([[np.eye(n), Z], [Z, ops.M.toarray()]])
    w, V = sla.eig(A, B, check_finite=False)
    X = V[:n, :]
    res = _pencil_residuals(ops, w, X)
    order = np.lexsort((w.real, w.imag))
    w, res = w[order], res[order]
    return Spectrum(eigenvalues=w, residuals=res, trusted=res <= trust_tol,
                    n_dof=n, d=ops.damping.d, omega=ops.damping.omega, h=ops.h)


def solve_qep_near(ops: OperatorSet, target: complex, k: int = 4,
                   krylov_dim: int = 80, trust_tol: float = TRUST_TOL,
                   seed: int = 0) -> Spectrum:
    """Shift-invert Arnoldi for the k eigenvalues nearest ``target``.

    Sparse alternative to the dense solve for larger meshes; the interesting
    eigenvalues hug the imaginary axis, which targets like i*mu0 pick out
    directly.  One Arnoldi sweep of fixed dimension is run on
    (A - target B)^{-1} B; Ritz pairs are back-checked on the quadratic
    pencil, so pairs swamped by the quasi-degenerate overdamped branch come
    out flagged untrusted rather than silently wrong.
    """
    n = ops.n_dof
    if k < 1 or krylov_dim <= k:
        raise ValueError(f"need krylov_dim > k >= 1, got k={k}, krylov_dim={krylov_dim}")
    A = sp.bmat([[None, sp.eye(n, format="csr")], [-ops.K, -ops.D]], format="csc")
    B = sp.block_diag([sp.eye(n, format="csr"), ops.M], format="csc")
    op = spla.splu((A - target * B).astype(complex))
    Bc = B.astype(complex).tocsr()

    m = min(krylov_dim, 2 * n)
    rng = np.random.default_rng(seed)
    Q = np.empty((2 * n, m + 1), dtype=complex)
    H = np.zeros((m + 1, m), dtype=complex)
    q = rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n)
    Q[:, 0] = q / np.linalg.norm(q)
    used = m
    for j in range(m):
        w_vec = op.solve(Bc @ Q[:, j])
        for reort in range(2):  # modified Gram-Schmidt, one reorthogonalization
            for i in range(j + 1):
                c = np.vdot(Q[:, i], w_vec)
                H[i, j] += c
                w_vec -= c * Q[:, i]
        beta = np.linalg.norm(w_vec)
        H[j + 1, j] = beta
        if beta < 1e-14:
            used = j + 1
            break
        Q[:, j + 1] = w_vec / beta

    Hm = H[:used, :used]
    ritz, S = sla.eig(Hm)
    finite = np.abs(ritz) > 1e-14
    lam = target + 1.0 / ritz[finite]
    vecs = Q[:, :used] @ S[:, finite]
    order = np.argsort(np.abs(lam - target))[:k]
    lam = lam[order]
    X = vecs[:n, order]
    res = _pencil_residuals(ops, lam, X)
    sort = np.lexsort((lam.real, lam.imag))
    lam, res = lam[sort], res[sort]
    return Spectrum(eigenvalues=lam, residuals=res, trusted=res <= trust_tol,
                    n_dof=n, d=ops.damping.d, omega=ops.damping.omega, h=ops.h)


def band_abscissa(spec: Spectrum, j_max: int | None = None) -> BandReport:
    """Per-band spectral abscissa over dyadic frequency bands.

    Bands are [0, 1) followed by [2^j, 2^(j+1)) for j = 0..j_max, binned by
    |Im lambda| over trusted pairs.  The top 20% of the |Im| range is
    excluded (mesh-cutoff artifacts); by default j_max stops at the last
    dyadic band that fits fully under that cutoff.  ``trend`` is True when
    the abscissa strictly increases over the last three populated dyadic
    bands.
    """
    if len(spec) == 0:
        raise ValueError("empty spectrum")
    lam = spec.trusted_eigenvalues
    if len(lam) == 0:
        raise ValueError("no trusted eigenvalues")
    im = np.abs(lam.imag)
    re = lam.real
    cutoff = 0.8 * im.max()
    keep = im <= cutoff
    if j_max is None:
        j_max = int(np.floor(np.log2(cutoff))) - 1 if cutoff >= 2.0 else 0
    edges = [(0.0, 1.0)] + [(2.0 ** j, 2.0 ** (j + 1)) for j in range(j_max + 1)]
    bands = []
    for lo, hi in edges:
        mask = keep & (im >= lo) & (im < hi)
        cnt = int(mask.sum())
        absc = float(re[mask].max()) if cnt else None
        bands.append(BandStat(lo=lo, hi=hi, abscissa=absc, count=cnt))
    dyadic = [b.abscissa for b in bands[1:] if b.abscissa is not None]
    trend = len(dyadic) >= 3 and dyadic[-3] < dyadic[-2] < dyadic[-1]
    return BandReport(bands=bands, trend=trend, im_cutoff=float(cutoff))


def verify_strong_stability(spec: Spectrum, tol: float = 1e-8) -> StabilityReport:
    """PASS iff every trusted eigenvalue sits strictly left of the axis.

    The margin scales with |lambda| so roundoff on large eigenvalues is not
    mistaken for instability.
    """
    lam = spec.trusted_eigenvalues
    if len(lam) == 0:
        return StabilityReport(passed=True, offenders=lam, note="no data")
    bad = lam.real >= -tol * (1.0 + np.abs(lam))
    return StabilityReport(passed=not bad.any(), offenders=lam[bad])


def undamped_frequencies(ops: OperatorSet) -> np.ndarray:
    """Frequencies sqrt(theta_n) of the undamped pencil (K, M), ascending."""
    if ops.n_dof > MAX_DENSE_DOF:
        raise QEPSizeError(f"n_dof={ops.n_dof} exceeds dense desk-scale limit")
    theta = sla.eigh(ops.K.toarray(), ops.M.toarray(), eigvals_only=True)
    return np.sqrt(np.maximum(theta, 0.0))
