"""Hypothesis checks for two-sided exponential weight functions.

A weight pair phi_k = exp(lambda * psi_k) lives on two subdomains separated
by an interface: side 1 inside (where the damping acts), side 2 outside,
with the outer boundary belonging to side 2 only.  The checked conditions
are the ones a weighted a-priori estimate of transmission type needs:

  GRAD            |grad phi_k| > 0 on each closed subdomain,
  OUTER_SIGN      d_nu phi_2 < 0 on the outer boundary,
  INTERFACE_SIGN  d_nu phi_k > 0 on the interface (both sides),
  JUMP            (d_nu phi_1)^2 - (d_nu phi_2)^2 > 1 on the interface,
  SUBELL          {Re p_k, Im p_k} >= c > 0 on the characteristic set of the
                  conjugated principal symbols,

where nu is the unit outer normal of the *outer* subdomain and the symbols
are

  p_1 = |xi|^2 + 2 i tau xi.grad(phi_1) - tau^2 |grad phi_1|^2,
  p_2 = |xi|^2 + 2 i tau xi.grad(phi_2) - tau^2 |grad phi_2|^2 - tau^2.

With phi = exp(lambda psi) all derivatives are analytic:
grad phi = lambda phi grad psi and the Hessian is
lambda phi (lambda grad psi grad psi' + Hess psi), giving the bracket in
closed form, {Re p, Im p} = 4 tau (xi' H xi + tau^2 grad(phi)' H grad(phi))
with H the Hessian of phi.  Samples are normalized to the unit cosphere
|xi|^2 + tau^2 = 1; degree-2/3 homogeneity restores any other scale.

The characteristic set is located by a cosphere scan (near-zeros of |p|
relative to the local symbol magnitude) sharpened by a short Newton
refinement; the bracket is then required to clear a positivity floor there.
In one space dimension the characteristic sets are empty for tau > 0 (the
imaginary part forces xi = 0 and the real part then forces tau = 0), so the
sub-ellipticity check passes vacuously and says so.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WeightError",
    "WeightSide",
    "WeightSpec",
    "IntervalGeometry",
    "AnnulusGeometry",
    "SamplingSpec",
    "SymbolSample",
    "ConditionResult",
    "WeightReport",
    "eval_symbol",
    "poisson_bracket",
    "poisson_bracket_fd",
    "check_weight_conditions",
    "interval_linear_weight",
    "interval_jump_violation_weight",
    "annulus_radial_linear_weight",
]

EPS_ZERO = 1e-2          # near-characteristic threshold, relative symbol scale
C_MIN = 1e-3             # positivity floor for the bracket on near-zeros
CONDITIONS = ("GRAD", "OUTER_SIGN", "INTERFACE_SIGN", "JUMP", "SUBELL")


class WeightError(ValueError):
    """Raised for ill-formed weight specifications."""


@dataclass
class WeightSide:
    """One side's base function psi with analytic first and second derivatives.

    ``psi`` maps an (m, dim) array of points to (m,); ``grad`` to (m, dim);
    ``hess`` to (m, dim, dim).  ``contains`` (optional) tests domain
    membership for stray evaluations.
    """

    psi: callable
    grad: callable
    hess: callable
    contains: callable | None = None


@dataclass
class WeightSpec:
    """Convexified weight pair phi_k = exp(lambda * psi_k)."""

    side1: WeightSide
    side2: WeightSide
    lmbda: float
    alpha: complex = 1j
    tau_min: float = 0.05
    name: str = ""

    def __post_init__(self):
        if self.lmbda <= 0:
            raise WeightError(f"convexification parameter must be positive, got {self.lmbda}")
        if self.alpha == 0:
            raise WeightError("alpha must be a non-null complex number")
        if not 0.0 < self.tau_min < 1.0:
            raise WeightError(f"tau_min must lie in (0, 1), got {self.tau_min}")

    def side(self, k: int) -> WeightSide:
        if k not in (1, 2):
            raise WeightError(f"side must be 1 or 2, got {k}")
        return self.side1 if k == 1 else self.side2

    def phi(self, pts: np.ndarray, k: int) -> np.ndarray:
        return np.exp(self.lmbda * self.side(k).psi(pts))

    def grad_phi(self, pts: np.ndarray, k: int) -> np.ndarray:
        s = self.side(k)
        return self.lmbda * np.exp(self.lmbda * s.psi(pts))[:, None] * s.grad(pts)

    def hess_phi(self, pts: np.ndarray, k: int) -> np.ndarray:
        s = self.side(k)
        lam = self.lmbda
        phi = np.exp(lam * s.psi(pts))
        gp = s.grad(pts)
        outer = gp[:, :, None] * gp[:, None, :]
        return lam * phi[:, None, None] * (lam * outer + s.hess(pts))


@dataclass
class IntervalGeometry:
    """1D two-sided layout: side 1 on (x_left, interface), side 2 beyond.

    The interface is the single point between the sides; the outer boundary
    is the far end of side 2.  The left end of side 1 bounds the excised
    core and carries no sign condition.
    """

    x_left: float
    interface: float
    x_right: float
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if not self.x_left < self.interface < self.x_right:
            raise WeightError("need x_left < interface < x_right")


@dataclass
class AnnulusGeometry:
    """2D concentric layout with radial normals.

    Side 1 is the annulus r in [r_excision, r_interface], side 2 the annulus
    [r_interface, r_outer]; the interface is the circle r = r_interface and
    the outer boundary the circle r = r_outer.  The excision circle bounds
    the removed critical-point core and carries no sign condition.
    """

    r_excision: float
    r_interface: float
    r_outer: float
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        if not 0.0 < self.r_excision < self.r_interface < self.r_outer:
            raise WeightError("need 0 < r_excision < r_interface < r_outer")


@dataclass
class SamplingSpec:
    n_space: int = 24        # per spatial dimension, per side
    n_angle: int = 48        # cosphere angular resolution (2D)
    n_tau: int = 32          # cosphere tau resolution (geometric spacing)
    n_surface: int = 64      # interface / outer-boundary samples (2D)

    def __post_init__(self):
        if min(self.n_space, self.n_angle, self.n_tau, self.n_surface) < 16:
            raise WeightError("sampling resolution must be at least 16 points per dimension")


@dataclass
class SymbolSample:
    """A retained near-characteristic cosphere sample."""

    x: np.ndarray
    xi: np.ndarray
    tau: float
    side: int
    p_value: complex
    bracket_value: float


@dataclass
class ConditionResult:
    condition: str
    passed: bool
    margin: float
    worst_point: np.ndarray | None
    note: str = ""


@dataclass
class WeightReport:
    conditions: dict
    overall_pass: bool
    near_zero_samples: list
    p1_zeroth_order_magnitude: float

    def __getitem__(self, key: str) -> ConditionResult:
        return self.conditions[key]


# -- symbol evaluation ---------------------------------------------------------

def _as_points(x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    return arr[None, :] if arr.ndim == 1 else arr


def eval_symbol(w: WeightSpec, x, xi, tau: float, side: int) -> complex:
    """Conjugated principal symbol p_side at one phase-space point."""
    pts = _as_points(x)
    _check_domain(w, pts, side)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    gp = w.grad_phi(pts, side)[0]
    p = (xi @ xi) + 2j * tau * (xi @ gp) - tau * tau * (gp @ gp)
    if side == 2:
        p -= tau * tau
    return complex(p)


def poisson_bracket(w: WeightSpec, x, xi, tau: float, side: int) -> float:
    """Closed-form {Re p, Im p} using the analytic weight derivatives."""
    pts = _as_points(x)
    _check_domain(w, pts, side)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    gp = w.grad_phi(pts, side)[0]
    H = w.hess_phi(pts, side)[0]
    return float(4.0 * tau * (xi @ H @ xi + tau * tau * gp @ H @ gp))


def poisson_bracket_fd(w: WeightSpec, x, xi, tau: float, side: int,
                       step: float = 1e-5) -> float:
    """Central finite-difference bracket; the cross-check oracle."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))

    def p_at(xx, xxi):
        pts = _as_points(xx)
        gp = w.grad_phi(pts, side)[0]
        val = (xxi @ xxi) + 2j * tau * (xxi @ gp) - tau * tau * (gp @ gp)
        return val - tau * tau if side == 2 else val

    total = 0.0
    for j in range(len(x)):
        ej = np.zeros(len(x))
        ej[j] = step
        dp_x = (p_at(x + ej, xi) - p_at(x - ej, xi)) / (2 * step)
        dp_xi = (p_at(x, xi + ej) - p_at(x, xi - ej)) / (2 * step)
        total += dp_xi.real * dp_x.imag - dp_x.real * dp_xi.imag
    return float(total)


def _check_domain(w: WeightSpec, pts: np.ndarray, side: int) -> None:
    pred = w.side(side).contains
    if pred is not None and not bool(np.all(pred(pts))):
        raise WeightError(f"evaluation point outside the side-{side} subdomain")


# -- geometry sampling ---------------------------------------------------------

def _side_points(geom, spec: SamplingSpec, side: int) -> np.ndarray:
    if isinstance(geom, IntervalGeometry):
        a, b = ((geom.x_left, geom.interface) if side == 1
                else (geom.interface, geom.x_right))
        return np.linspace(a, b, spec.n_space)[:, None]
    r0, r1 = ((geom.r_excision, geom.r_interface) if side == 1
              else (geom.r_interface, geom.r_outer))
    r = np.linspace(r0, r1, spec.n_space)
    th = np.linspace(0.0, 2 * np.pi, spec.n_space, endpoint=False)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    return np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])


def _interface_points(geom, spec: SamplingSpec) -> np.ndarray:
    if isinstance(geom, IntervalGeometry):
        return np.array([[geom.interface]])
    th = np.linspace(0.0, 2 * np.pi, spec.n_surface, endpoint=False)
    return geom.r_interface * np.column_stack([np.cos(th), np.sin(th)])


def _outer_points(geom, spec: SamplingSpec) -> np.ndarray:
    if isinstance(geom, IntervalGeometry):
        return np.array([[geom.x_right]])
    th = np.linspace(0.0, 2 * np.pi, spec.n_surface, endpoint=False)
    return geom.r_outer * np.column_stack([np.cos(th), np.sin(th)])


def _interface_normal(geom, pts: np.ndarray) -> np.ndarray:
    # outer normal of side 2 on the interface: toward side 1
    if isinstance(geom, IntervalGeometry):
        return -np.ones_like(pts)
    return -pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _outer_normal(geom, pts: np.ndarray) -> np.ndarray:
    if isinstance(geom, IntervalGeometry):
        return np.ones_like(pts)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


# -- condition checks ----------------------------------------------------------

def _directional(w: WeightSpec, pts: np.ndarray, normal: np.ndarray, k: int) -> np.ndarray:
    return np.einsum("ij,ij->i", w.grad_phi(pts, k), normal)


def _cosphere(spec: SamplingSpec, tau_min: float, dim: int):
    """Geometrically spaced tau levels and unit directions on the cosphere."""
    taus = np.geomspace(tau_min, 0.999, spec.n_tau)
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        th = np.linspace(0.0, 2 * np.pi, spec.n_angle, endpoint=False)
        dirs = np.column_stack([np.cos(th), np.sin(th)])
    return taus, dirs


def _subell_at_point(w: WeightSpec, x: np.ndarray, side: int, taus, dirs,
                     eps_zero: float, c_min: float, max_seeds: int = 8):
    """Near-zeros and bracket values of p_side on the cosphere over one x.

    The whole (tau, direction) grid is evaluated at once; the few best
    candidates seed a Newton refinement onto the characteristic set, and
    refined points within the near-zero threshold are kept (deduplicated).
    """
    pts = x[None, :]
    gp = w.grad_phi(pts, side)[0]
    H = w.hess_phi(pts, side)[0]
    g2 = gp @ gp
    extra = 1.0 if side == 2 else 0.0
    scale = 1.0 + g2 + extra
    rho = np.sqrt(1.0 - taus * taus)                       # (n_tau,)
    proj = dirs @ gp                                       # (n_dir,)
    p = (rho * rho)[:, None] + 2j * (taus * rho)[:, None] * proj[None, :] \
        - ((g2 + extra) * taus * taus)[:, None]
    absval = np.abs(p)
    mask = absval <= 4.0 * eps_zero * scale
    if not mask.any():
        return []
    flat = np.flatnonzero(mask.ravel())
    order = flat[np.argsort(absval.ravel()[flat])][:max_seeds]
    found = []
    for idx in order:
        it, jd = divmod(idx, dirs.shape[0])
        xi_r, tau_r = _refine_zero(gp, extra, rho[it] * dirs[jd], taus[it])
        p_r = ((xi_r @ xi_r) + 2j * tau_r * (xi_r @ gp)
               - tau_r * tau_r * (g2 + extra))
        if abs(p_r) > eps_zero * scale:
            continue
        if any(s.side == side and abs(s.tau - tau_r) < 1e-6
               and np.linalg.norm(s.xi - xi_r) < 1e-6 for s in found):
            continue
        br = float(4.0 * tau_r * (xi_r @ H @ xi_r + tau_r**2 * gp @ H @ gp))
        found.append(SymbolSample(x=x.copy(), xi=xi_r, tau=float(tau_r),
                                  side=side, p_value=complex(p_r),
                                  bracket_value=br))
    return found


def _refine_zero(gp: np.ndarray, extra: float, xi: np.ndarray, tau: float,
                 iters: int = 12):
    """Newton steps on (Re p, Im p) = 0 along the unit cosphere."""
    dim = len(gp)
    if dim == 1:
        return xi, tau
    th = float(np.arctan2(xi[1], xi[0]))
    t = float(tau)
    g2 = gp @ gp
    for _ in range(iters):
        rho = np.sqrt(max(1.0 - t * t, 1e-14))
        e = np.array([np.cos(th), np.sin(th)])
        xi_v = rho * e
        p = (rho * rho + 2j * t * (xi_v @ gp) - t * t * (g2 + extra))
        dp_dxi = 2 * xi_v + 2j * t * gp
        de_dth = np.array([-np.sin(th), np.cos(th)])
        dxi_dth = rho * de_dth
        dxi_dt = -t / rho * e
        dp_dth = dp_dxi @ dxi_dth
        dp_dt = dp_dxi @ dxi_dt + 2j * (xi_v @ gp) - 2 * t * (g2 + extra)
        J = np.array([[dp_dth.real, dp_dt.real], [dp_dth.imag, dp_dt.imag]])
        rhs = np.array([p.real, p.imag])
        if abs(np.linalg.det(J)) < 1e-14:
            break
        dth, dt = np.linalg.solve(J, rhs)
        th -= dth
        t = float(np.clip(t - dt, 1e-4, 0.9999))
        if abs(p) < 1e-13:
            break
    rho = np.sqrt(max(1.0 - t * t, 1e-14))
    return rho * np.array([np.cos(th), np.sin(th)]), t


def check_weight_conditions(w: WeightSpec, geom, sampling: SamplingSpec | None = None,
                            eps_zero: float = EPS_ZERO,
                            c_min: float = C_MIN) -> WeightReport:
    """Evaluate all five weight hypotheses on a sampled geometry.

    Margins are signed distances into the valid region (positive means the
    condition holds with room); failures are report entries, not errors.
    The trace equality phi_1 = phi_2 on the interface is a precondition of
    the whole setup and raises if violated.
    """
    sampling = sampling or SamplingSpec()
    ipts = _interface_points(geom, sampling)
    trace_gap = float(np.max(np.abs(w.phi(ipts, 1) - w.phi(ipts, 2))))
    if trace_gap > 1e-12:
        raise WeightError(f"weight traces differ on the interface by {trace_gap:.3e}")

    conditions: dict[str, ConditionResult] = {}

    # GRAD on both closed subdomains
    worst_val, worst_pt = np.inf, None
    for k in (1, 2):
        pts = _side_points(geom, sampling, k)
        mags = np.linalg.norm(w.grad_phi(pts, k), axis=1)
        i = int(np.argmin(mags))
        if mags[i] < worst_val:
            worst_val, worst_pt = float(mags[i]), pts[i]
    conditions["GRAD"] = ConditionResult("GRAD", worst_val > 0.0, worst_val, worst_pt)

    # OUTER_SIGN on the outer boundary (side 2 trace)
    opts = _outer_points(geom, sampling)
    dn = _directional(w, opts, _outer_normal(geom, opts), 2)
    i = int(np.argmax(dn))
    conditions["OUTER_SIGN"] = ConditionResult(
        "OUTER_SIGN", dn[i] < 0.0, float(-dn[i]), opts[i])

    # INTERFACE_SIGN for both sides
    nrm = _interface_normal(geom, ipts)
    worst_val, worst_pt = np.inf, None
    for k in (1, 2):
        dnk = _directional(w, ipts, nrm, k)
        i = int(np.argmin(dnk))
        if dnk[i] < worst_val:
            worst_val, worst_pt = float(dnk[i]), ipts[i]
    conditions["INTERFACE_SIGN"] = ConditionResult(
        "INTERFACE_SIGN", worst_val > 0.0, worst_val, worst_pt)

    # JUMP of squared normal derivatives across the interface
    d1 = _directional(w, ipts, nrm, 1)
    d2 = _directional(w, ipts, nrm, 2)
    jump = d1 * d1 - d2 * d2 - 1.0
    i = int(np.argmin(jump))
    conditions["JUMP"] = ConditionResult("JUMP", jump[i] > 0.0, float(jump[i]), ipts[i])

    # SUBELL over near-characteristic cosphere samples
    taus, dirs = _cosphere(sampling, w.tau_min, geom.dim)
    samples: list[SymbolSample] = []
    for k in (1, 2):
        for x in _side_points(geom, sampling, k):
            samples.extend(_subell_at_point(w, x, k, taus, dirs, eps_zero, c_min))
    if samples:
        brackets = np.array([s.bracket_value for s in samples])
        i = int(np.argmin(brackets))
        conditions["SUBELL"] = ConditionResult(
            "SUBELL", brackets[i] >= c_min, float(brackets[i] - c_min),
            samples[i].x, note=f"{len(samples)} near-characteristic samples")
    else:
        conditions["SUBELL"] = ConditionResult(
            "SUBELL", True, float("inf"), None,
            note="characteristic set not met by the scan (vacuous)")

    # size of the zeroth-order term the side-1 symbol omits, for reference
    taus_all = np.geomspace(w.tau_min, 0.999, sampling.n_tau)
    omitted = float(np.max(taus_all**2 / np.abs(1.0 + w.alpha * taus_all)))

    overall = all(c.passed for c in conditions.values())
    return WeightReport(conditions=conditions, overall_pass=overall,
                        near_zero_samples=samples,
                        p1_zeroth_order_magnitude=omitted)


# -- weight catalog ------------------------------------------------------------

def _linear_side(slope: float, anchor: float, level: float = 0.0) -> WeightSide:
    """1D psi(x) = slope * (anchor - x) + level."""
    return WeightSide(
        psi=lambda p: slope * (anchor - p[:, 0]) + level,
        grad=lambda p: np.full((len(p), 1), -slope),
        hess=lambda p: np.zeros((len(p), 1, 1)),
    )


def interval_linear_weight(lmbda: float = 8.0, slope1: float = 0.5,
                           slope2: float = 0.3, x_left: float = 0.0,
                           interface: float = 0.5, x_right: float = 1.0,
                           tau_min: float = 0.05):
    """1D catalog weight: linear psi on both sides, matched at the interface.

    Positive slopes (in the inward direction) give the interface signs; the
    jump margin is lambda^2 (slope1^2 - slope2^2) at the shared trace value.
    """
    if not slope1 > slope2 > 0:
        raise WeightError("need slope1 > slope2 > 0")
    geom = IntervalGeometry(x_left, interface, x_right)
    w = WeightSpec(side1=_linear_side(slope1, interface),
                   side2=_linear_side(slope2, interface),
                   lmbda=lmbda, tau_min=tau_min,
                   name=f"interval-linear({slope1},{slope2})")
    return w, geom


def interval_jump_violation_weight(lmbda: float = 8.0, slope2: float = 0.1,
                                   jump_value: float = 0.5):
    """1D weight engineered to fail exactly the interface jump condition.

    Slopes are chosen so the squared-normal-derivative jump equals
    ``jump_value`` (< 1) at the interface; every other condition passes.
    """
    if not 0.0 < jump_value < 1.0:
        raise WeightError("jump_value must lie in (0, 1) to violate the condition")
    slope1 = float(np.sqrt(slope2**2 + jump_value / lmbda**2))
    geom = IntervalGeometry(0.0, 0.5, 1.0)
    w = WeightSpec(side1=_linear_side(slope1, 0.5),
                   side2=_linear_side(slope2, 0.5),
                   lmbda=lmbda,
                   name=f"interval-jump-violation({jump_value})")
    return w, geom


def _radial_linear_side(slope: float, r_anchor: float) -> WeightSide:
    """2D psi(x) = slope * (r_anchor - |x|)."""

    def psi(p):
        return slope * (r_anchor - np.linalg.norm(p, axis=1))

    def grad(p):
        r = np.linalg.norm(p, axis=1, keepdims=True)
        return -slope * p / r

    def hess(p):
        r = np.linalg.norm(p, axis=1)
        rh = p / r[:, None]
        eye = np.eye(2)[None, :, :]
        proj = eye - rh[:, :, None] * rh[:, None, :]
        return -slope / r[:, None, None] * proj

    return WeightSide(psi=psi, grad=grad, hess=hess)


def annulus_radial_linear_weight(lmbda: float = 8.0, slope1: float = 0.6,
                                 slope2: float = 0.5, r_excision: float = 0.35,
                                 r_interface: float = 0.5, r_outer: float = 0.75,
                                 tau_min: float = 0.05):
    """2D catalog weight: radial-linear psi on concentric annuli.

    The annuli are kept thin enough that the exponential weight stays O(1):
    the characteristic set then sits at tau above ``tau_min`` where the
    cosphere scan can certify the bracket, and the outward decay of phi_2
    does not overwhelm the convexification at the outer rim.
    """
    geom = AnnulusGeometry(r_excision, r_interface, r_outer)
    w = WeightSpec(side1=_radial_linear_side(slope1, r_interface),
                   side2=_radial_linear_side(slope2, r_interface),
                   lmbda=lmbda, tau_min=tau_min,
                   name=f"radial-linear(lambda={lmbda})")
    return w, geom
