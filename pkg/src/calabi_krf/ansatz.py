"""Radial potentials for Calabi-symmetric metrics on projective bundles.

A metric with Calabi symmetry on the total space of
P(O + O(-1)^(m+1)) -> P^n is encoded by a convex potential u(rho) of the
fiber log-radius rho, together with the class pair (a, b).  This module
holds the grid/profile containers, the reference round-fiber potential,
finite-difference derivative caches with asymptotic ghost closure, and the
positivity/asymptotics validator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AnsatzError

# Relative spread allowed in the end-window fits before a profile is
# declared non-asymptotic (no finite slope / no exponential left tail).
FIT_SPREAD_TOL = 0.05

# Relative precision the right-tail coefficient fit aims for when choosing
# how deep into the grid the fit window must reach (see
# asymptotic_coefficients).
TAIL_FIT_TARGET = 1e-4


@dataclass(frozen=True)
class BundleParams:
    """Discrete bundle data: fiber projectivization rank m+1, base dimension n."""

    m: int
    n: int

    def __post_init__(self):
        if not (isinstance(self.m, int) and isinstance(self.n, int)):
            raise ValueError("m and n must be integers")
        if self.m < 0 or self.n < 1:
            raise ValueError(f"need m >= 0 and n >= 1, got (m, n) = ({self.m}, {self.n})")

    @property
    def dim(self) -> int:
        return self.m + self.n + 1


@dataclass(frozen=True)
class KahlerClass:
    """Class coefficients: a on the base generator, b on the fiber generator.

    a == 0 is permitted only as the degenerate cone class used by the
    resolution mode; validate_kahler rejects it for an actual metric.
    """

    a: float
    b: float

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"class coefficient a must be >= 0, got {self.a}")
        if self.b <= 0:
            raise ValueError(f"class coefficient b must be > 0, got {self.b}")


def _as_params(params) -> BundleParams:
    """Coerce an (m, n) pair; BundleParams instances pass through."""
    return params if isinstance(params, BundleParams) else BundleParams(*params)


def _as_class(klass) -> KahlerClass:
    """Coerce an (a, b) pair; KahlerClass instances pass through."""
    return klass if isinstance(klass, KahlerClass) else KahlerClass(*klass)


@dataclass(frozen=True)
class Grid:
    """Uniform rho-grid containing 0 exactly at index zero_index."""

    rho_min: float
    rho_max: float
    count: int
    spacing: float
    zero_index: int

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.count) - self.zero_index) * self.spacing

    @property
    def fit_window(self) -> int:
        """Width (in nodes) of the end windows used for asymptotic fits: 5%."""
        return max(4, round(0.05 * self.count))

    @property
    def interior(self) -> slice:
        """Nodes outside the two asymptotic-fit windows."""
        w = self.fit_window
        return slice(w, self.count - w)


def make_grid(rho_min: float, rho_max: float, count: int) -> Grid:
    """Build a uniform grid on ~[rho_min, rho_max] that contains rho = 0.

    Spacing is fixed at (rho_max - rho_min)/(count - 1); the node set is then
    anchored at 0, which can extend either end by less than one spacing and
    add at most one node.
    """
    if not rho_min < 0.0 < rho_max:
        raise ValueError(f"window must straddle 0, got [{rho_min}, {rho_max}]")
    if count < 64:
        raise ValueError(f"count must be >= 64, got {count}")
    h = (rho_max - rho_min) / (count - 1)
    left = max(1, math.ceil(-rho_min / h - 1e-9))
    right = max(1, math.ceil(rho_max / h - 1e-9))
    return Grid(
        rho_min=-left * h,
        rho_max=right * h,
        count=left + right + 1,
        spacing=h,
        zero_index=left,
    )


@dataclass(frozen=True)
class RadialProfile:
    """Potential samples plus derivative caches and asymptotic data.

    du..d4u are centered second-order differences (filled by differentiate;
    None until then).  c_minus scales the left tail u' ~ c_minus e^rho,
    slope_b is the linear growth rate at the right end and c_plus the
    coefficient of the decaying correction (slope_b - u') ~ c_plus e^-rho.
    """

    grid: Grid
    u: np.ndarray
    c_minus: float
    c_plus: float
    slope_b: float
    du: np.ndarray | None = field(default=None, repr=False)
    d2u: np.ndarray | None = field(default=None, repr=False)
    d3u: np.ndarray | None = field(default=None, repr=False)
    d4u: np.ndarray | None = field(default=None, repr=False)


def canonical_profile(b0: float, grid: Grid) -> RadialProfile:
    """Round reference potential b0 * log(1 + e^rho), with caches filled."""
    if b0 <= 0:
        raise AnsatzError(f"b0 must be positive, got {b0}")
    rho = grid.nodes
    u = b0 * np.logaddexp(0.0, rho)
    prof = RadialProfile(grid=grid, u=u, c_minus=b0, c_plus=b0, slope_b=b0)
    return differentiate(prof)


def _left_ghost_coeff(u: np.ndarray, rho: np.ndarray, w: int, fallback: float) -> float:
    """Fit c in u ~ u[0] + c (e^rho - e^rho0) over the left window, pinned at node 0."""
    x = np.exp(rho[:w]) - math.exp(rho[0])
    y = u[:w] - u[0]
    denom = float(x @ x)
    if denom <= 0.0 or not math.isfinite(denom):
        return fallback
    return float(x @ y) / denom


def _right_ghost_coeffs(
    u: np.ndarray, rho: np.ndarray, w: int, slope: float, fallback: float
) -> tuple[float, float]:
    """Fit (d, c) in u ~ slope*rho + d + c e^-rho over the right window."""
    v = u[-w:] - slope * rho[-w:]
    phi = np.exp(-rho[-w:])
    var = float(np.var(phi))
    if var <= 0.0 or not math.isfinite(var):
        return float(np.mean(v)), fallback
    c = float(np.mean((v - v.mean()) * (phi - phi.mean()))) / var
    d = float(v.mean() - c * phi.mean())
    return d, c


def differentiate(profile: RadialProfile) -> RadialProfile:
    """Return a copy with du..d4u filled by centered differences.

    Two ghost nodes per end are synthesized from the asymptotic closure
    (left: exponential tail pinned at the boundary node; right: linear
    growth at the stored slope_b plus a decaying exponential), so every
    node gets a full centered stencil.  One-sided stencils are never used.
    """
    grid = profile.grid
    u = profile.u
    rho = grid.nodes
    h = grid.spacing
    n = grid.count
    w = grid.fit_window

    c_l = _left_ghost_coeff(u, rho, w, profile.c_minus)
    d_r, c_r = _right_ghost_coeffs(u, rho, w, profile.slope_b, profile.c_plus)

    up = np.empty(n + 4)
    up[2:-2] = u
    e0 = math.exp(rho[0])
    for k in (1, 2):
        up[2 - k] = u[0] + c_l * (math.exp(rho[0] - k * h) - e0)
        rr = rho[-1] + k * h
        up[n + 1 + k] = profile.slope_b * rr + d_r + c_r * math.exp(-rr)

    du = (up[3:-1] - up[1:-3]) / (2.0 * h)
    d2u = (up[3:-1] - 2.0 * up[2:-2] + up[1:-3]) / h**2
    d3u = (-up[:-4] + 2.0 * up[1:-3] - 2.0 * up[3:-1] + up[4:]) / (2.0 * h**3)
    d4u = (up[:-4] - 4.0 * up[1:-3] + 6.0 * up[2:-2] - 4.0 * up[3:-1] + up[4:]) / h**4
    return replace(profile, du=du, d2u=d2u, d3u=d3u, d4u=d4u)


def _require_caches(profile: RadialProfile) -> RadialProfile:
    if profile.du is None or profile.d2u is None:
        return differentiate(profile)
    return profile


def asymptotic_coefficients(profile: RadialProfile) -> tuple[float, float, float]:
    """Fit (c_minus, c_plus, slope_b) from the derivative caches.

    c_minus comes from du * e^-rho over the leftmost window; slope_b is the
    extrapolated limit of du over the rightmost window and c_plus the
    coefficient of (slope_b - du) * e^rho there.  Raises AnsatzError when a
    coefficient is nonpositive or the windows are inconsistent with the
    closure models (e.g. unbounded du growth: no finite slope).
    """
    prof = _require_caches(profile)
    grid = prof.grid
    rho = grid.nodes
    w = grid.fit_window
    du = prof.du
    # Centered differences of e^rho data carry a deterministic relative bias
    # h^2/6 (du = u' + (h^2/6) u''' with u''' = u' in the tails); divide it
    # back out so the coefficients converge at the closure rate.
    fd_bias = 1.0 + grid.spacing**2 / 6.0

    y = du[:w] * np.exp(-rho[:w])
    c_minus = float(np.mean(y)) / fd_bias
    if c_minus <= 0.0 or not math.isfinite(c_minus):
        raise AnsatzError(f"left tail coefficient not positive: c_minus = {c_minus}")
    spread = float(np.max(y) - np.min(y)) / abs(c_minus)
    if spread > FIT_SPREAD_TOL:
        raise AnsatzError(f"left window inconsistent with exponential tail (spread {spread:.3g})")

    du_w = du[-w:]
    slope0 = float(np.mean(du_w))
    if slope0 <= 0.0 or not math.isfinite(slope0):
        raise AnsatzError(f"right slope not positive: slope_b = {slope0}")
    du_spread = float(np.max(du_w) - np.min(du_w))
    if du_spread > FIT_SPREAD_TOL * slope0:
        raise AnsatzError(
            f"right window du varies by {du_spread:.3g} against slope {slope0:.3g}: "
            "no finite asymptotic slope"
        )

    # On wide grids the tail signal c_plus e^-rho decays below the rounding
    # noise that differencing leaves in du, so the fit window is deepened
    # until the regressor clears that floor (capped at a quarter of the
    # grid).  The depth rule is scale free: doubling u doubles noise and
    # slope0 alike, keeping the window, and hence the exact linearity of the
    # coefficients in b0, independent of scale.
    noise_du = np.finfo(float).eps * max(float(np.max(np.abs(prof.u))), 1.0) / grid.spacing
    phi_cut = noise_du / (TAIL_FIT_TARGET * slope0)
    rho_cut = -math.log(phi_cut) if phi_cut > 0.0 else float(rho[-1])
    rho_cut = min(max(rho_cut, rho[-1] - 0.25 * (rho[-1] - rho[0])), float(rho[-w]))
    wr = grid.count - int(np.searchsorted(rho, rho_cut))

    du_r = du[-wr:]
    phi = np.exp(-rho[-wr:])
    var = float(np.var(phi))
    if var <= 0.0 or not math.isfinite(var):
        raise AnsatzError("right window degenerate: cannot separate slope from tail")
    c_du = -float(np.mean((du_r - du_r.mean()) * (phi - phi.mean()))) / var
    slope_b = float(du_r.mean() + c_du * phi.mean())
    if slope_b <= 0.0 or not math.isfinite(slope_b):
        raise AnsatzError(f"right slope not positive: slope_b = {slope_b}")
    c_plus = c_du / fd_bias
    if c_plus <= 0.0 or not math.isfinite(c_plus):
        raise AnsatzError(f"right tail coefficient not positive: c_plus = {c_plus}")
    return c_minus, c_plus, slope_b


@dataclass(frozen=True)
class ConditionCheck:
    """Outcome of one Calabi-criterion condition."""

    cid: int
    label: str
    passed: bool
    worst_node: int | None = None
    worst_value: float | None = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    conditions: tuple[ConditionCheck, ...]

    def failing(self) -> tuple[ConditionCheck, ...]:
        return tuple(c for c in self.conditions if not c.passed)


def validate_kahler(
    profile: RadialProfile, klass: KahlerClass, slope_rtol: float = 1e-6
) -> ValidationReport:
    """Check the four positivity/smoothness conditions for a Kahler metric.

    1. class coefficient a > 0;
    2. u' > 0 and u'' > 0 on interior nodes;
    3. left end closes smoothly (positive fitted c_minus);
    4. right end closes smoothly (positive c_plus, fitted slope matching
       class b to slope_rtol).

    slope_rtol defaults to the analytic-data tolerance 1e-6; flow callers
    pass the looser evolution tolerance.
    """
    klass = _as_class(klass)
    prof = _require_caches(profile)
    inter = prof.grid.interior
    checks: list[ConditionCheck] = []

    checks.append(
        ConditionCheck(1, "class a > 0", klass.a > 0.0, worst_value=klass.a)
    )

    # Where the true derivatives decay below the rounding noise of the
    # difference stencils (eps |u| / h^k), their computed sign is
    # meaningless, so positivity is only enforced where it is resolvable.
    # Degenerate profiles that hide below the floor are still caught by the
    # tail fits of conditions 3 and 4.
    h = prof.grid.spacing
    du_i = prof.du[inter]
    d2u_i = prof.d2u[inter]
    fp_scale = 8.0 * np.finfo(float).eps * np.abs(prof.u[inter])
    j1 = int(np.argmin(du_i + fp_scale / (2.0 * h)))
    j2 = int(np.argmin(d2u_i + fp_scale / h**2))
    off = inter.start
    if du_i[j1] + fp_scale[j1] / (2.0 * h) <= 0.0:
        checks.append(ConditionCheck(2, "u' > 0, u'' > 0", False, off + j1, float(du_i[j1]),
                                     "u' negative"))
    elif d2u_i[j2] + fp_scale[j2] / h**2 <= 0.0:
        checks.append(ConditionCheck(2, "u' > 0, u'' > 0", False, off + j2, float(d2u_i[j2]),
                                     "u'' negative"))
    else:
        checks.append(ConditionCheck(2, "u' > 0, u'' > 0", True,
                                     off + j2, float(d2u_i[j2])))

    try:
        c_minus, c_plus, slope_b = asymptotic_coefficients(prof)
    except AnsatzError as err:
        checks.append(ConditionCheck(3, "left tail smooth", False, detail=str(err)))
        checks.append(ConditionCheck(4, "right tail smooth", False, detail=str(err)))
    else:
        checks.append(
            ConditionCheck(3, "left tail smooth", c_minus > 0.0, worst_value=c_minus)
        )
        slope_ok = abs(slope_b - klass.b) <= slope_rtol * abs(klass.b)
        detail = "" if slope_ok else (
            f"fitted slope {slope_b!r} vs class b {klass.b!r} (rtol {slope_rtol:g})"
        )
        checks.append(
            ConditionCheck(4, "right tail smooth", c_plus > 0.0 and slope_ok,
                           worst_value=slope_b, detail=detail)
        )

    # 0 < u' <= b is implied by conditions 2 and 4 in the continuum; check
    # the discrete arrays directly so violations name a node.
    j3 = int(np.argmax(du_i))
    if du_i[j3] > klass.b * (1.0 + slope_rtol):
        checks.append(ConditionCheck(5, "u' <= b", False, off + j3, float(du_i[j3])))
    else:
        checks.append(ConditionCheck(5, "u' <= b", True, off + j3, float(du_i[j3])))

    return ValidationReport(all(c.passed for c in checks), tuple(checks))
