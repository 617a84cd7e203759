"""Time integration of the reduced flow and singular-regime bookkeeping.

The radial potential follows

    du/dt = log[(a(t) + u')^n (u')^m u''] - (m+1) rho + c_t,

with the class coefficients a(t), b(t) evolving linearly in t.  The
module classifies the finite-time regime exactly from the initial class,
advances states with a masked explicit Heun scheme (jitted driver in
_stepper), and exposes the consistency residual used by the convergence
checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction

import numpy as np

from . import _stepper
from .ansatz import (
    BundleParams,
    Grid,
    KahlerClass,
    RadialProfile,
    _as_class,
    _as_params,
    asymptotic_coefficients,
    canonical_profile,
    differentiate,
    validate_kahler,
)
from .errors import AnsatzError, StepError

MODE_STANDARD = "standard"
MODE_RESOLUTION = "resolution"
MODE_PERTURBED = "perturbed"
_MODES = (MODE_STANDARD, MODE_RESOLUTION, MODE_PERTURBED)

# Relative window around exact equality inside which floating-point class
# data is treated as sitting on the extinction boundary.
BOUNDARY_RTOL = 1e-12

# evolve refuses targets this close to the singular time; the estimates
# being monitored all degenerate there.
T_REFUSAL = 0.999

# Nodes dropped on each side of the mask span (on top of the fit windows)
# when taking residual maxima, so the junction stencils that straddle
# model-governed data do not dominate the norm.
RESIDUAL_MARGIN = 8

# Window (in nodes) for the per-stage junction closure fits inside the
# stepping kernel.  It must stay narrow: the closure is a two-term
# series in e^rho, so widening the window grows its truncation bias
# faster than it averages noise down.
JUNCTION_WINDOW = 16


class RegimeTag(str, Enum):
    SMALL_CONTRACTION = "SmallContraction"
    POINT_EXTINCTION = "PointExtinction"
    COLLAPSE_TO_BASE = "CollapseToBase"
    RESOLUTION_THEN_COLLAPSE = "ResolutionThenCollapse"
    CONE_NON_CARTIER = "ConeNonCartier"


@dataclass(frozen=True)
class Regime:
    """Singular-time classification of an initial class.

    T is the first singular time; limit_base_coefficient is the multiple
    of the base Fubini-Study form in the limit, defined for the collapse
    regimes and None otherwise.  boundary_warning flags floating-point
    input that sat within BOUNDARY_RTOL of the extinction boundary
    without being exactly rational-equal.
    """

    tag: RegimeTag
    T: float
    limit_base_coefficient: float | None = None
    boundary_warning: bool = False


def classify_regime(params: BundleParams, class0: KahlerClass) -> Regime:
    """Classify the flow regime by exact rational comparison.

    Floats convert to Fraction exactly, so the three-way comparison of
    b0/(m+2) against a0/(n-m) is exact; near-equal floating input is
    reported as the boundary case with a warning flag.
    """
    params = _as_params(params)
    class0 = _as_class(class0)
    m, n = params.m, params.n
    a0 = Fraction(class0.a)
    b0 = Fraction(class0.b)
    if b0 <= 0:
        raise ValueError("class0.b must be positive")

    collapse_T = b0 / (m + 2)
    collapse_coef = a0 - Fraction(n - m, m + 2) * b0

    if a0 == 0:
        if m > n:
            return Regime(RegimeTag.RESOLUTION_THEN_COLLAPSE, float(collapse_T),
                          float(collapse_coef))
        if m == n:
            return Regime(RegimeTag.CONE_NON_CARTIER, float(collapse_T))
        raise ValueError(
            "a0 = 0 with m < n is the flipped bundle; classify the (n, m) bundle instead"
        )

    if m >= n:
        return Regime(RegimeTag.COLLAPSE_TO_BASE, float(collapse_T), float(collapse_coef))

    extinct_T = a0 / (n - m)
    if collapse_T == extinct_T:
        return Regime(RegimeTag.POINT_EXTINCTION, float(extinct_T))
    near = abs(collapse_T - extinct_T) <= BOUNDARY_RTOL * max(collapse_T, extinct_T)
    if near:
        return Regime(RegimeTag.POINT_EXTINCTION, float(extinct_T), boundary_warning=True)
    if collapse_T > extinct_T:
        return Regime(RegimeTag.SMALL_CONTRACTION, float(extinct_T))
    return Regime(RegimeTag.COLLAPSE_TO_BASE, float(collapse_T), float(collapse_coef))


def _schedule(class0: KahlerClass, params: BundleParams, mode: str) -> tuple[float, float, float, float]:
    """Linear coefficients (a0, da/dt, b0, db/dt) of the class path."""
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    db = -float(params.m + 2)
    if mode == MODE_PERTURBED:
        if params.m != params.n:
            raise ValueError("perturbed mode requires m = n")
        if class0.a <= 0.0:
            raise ValueError("perturbed mode carries delta > 0 in the a-slot")
        return class0.a, 0.0, class0.b, db
    da = float(params.m - params.n)
    if mode == MODE_RESOLUTION:
        if params.m <= params.n:
            raise ValueError("resolution mode requires m > n")
        if class0.a != 0.0:
            raise ValueError("resolution mode starts from a0 = 0")
    return class0.a, da, class0.b, db


def class_at(class0: KahlerClass, params: BundleParams, t: float, mode: str = MODE_STANDARD) -> KahlerClass:
    """Kahler class at time t under the mode's linear schedule."""
    class0 = _as_class(class0)
    params = _as_params(params)
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    a00, da, b00, db = _schedule(class0, params, mode)
    T = classify_regime(params, class0).T
    if t >= T:
        raise ValueError(f"t = {t} is not before the singular time T = {T}")
    return KahlerClass(a00 + da * t, b00 + db * t)


@dataclass(frozen=True)
class FlowState:
    """Immutable snapshot of the flow at one time."""

    t: float
    params: BundleParams
    class0: KahlerClass
    profile: RadialProfile
    mode: str = MODE_STANDARD
    delta: float | None = None
    gauge_ct: bool = True

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.t < 0.0:
            raise ValueError("t must be nonnegative")
        if self.mode == MODE_PERTURBED and (self.delta is None or self.delta <= 0.0):
            raise ValueError("perturbed mode requires delta > 0")

    @property
    def regime(self) -> Regime:
        return classify_regime(self.params, self.class0)

    @property
    def klass(self) -> KahlerClass:
        return class_at(self.class0, self.params, self.t, self.mode)


@dataclass(frozen=True)
class FlowControls:
    """Step-control knobs shared by step/evolve/residual."""

    dt_max: float = 5e-3
    cfl_factor: float = 0.4
    output_every: int = 100
    floor_abs: float = 1e-8
    floor_rel: float = 1e-2
    max_halvings: int = 10
    max_steps: int = 50_000_000

    def __post_init__(self) -> None:
        if not 0.0 < self.cfl_factor <= 0.5:
            raise ValueError("cfl_factor must lie in (0, 0.5]: the explicit "
                             "diffusion limit is dt <= 0.5 h^2 u''")
        if self.dt_max <= 0.0:
            raise ValueError("dt_max must be positive")
        if self.output_every < 1:
            raise ValueError("output_every must be at least 1")
        if self.floor_abs < 0.0 or not 0.0 <= self.floor_rel < 1.0:
            raise ValueError("floors must satisfy floor_abs >= 0, 0 <= floor_rel < 1")
        if self.max_halvings < 0 or self.max_steps < 1:
            raise ValueError("max_halvings >= 0 and max_steps >= 1 required")


def normalization_ct(profile: RadialProfile, klass: KahlerClass, params: BundleParams) -> float:
    """Gauge constant -log u''(0) - m log u'(0) - n log(a + u'(0))."""
    klass = _as_class(klass)
    params = _as_params(params)
    prof = profile if profile.du is not None else differentiate(profile)
    i0 = prof.grid.zero_index
    du0 = float(prof.du[i0])
    d2u0 = float(prof.d2u[i0])
    av = klass.a + du0
    if du0 <= 0.0 or d2u0 <= 0.0 or av <= 0.0:
        raise AnsatzError(
            f"normalization needs positive u'(0), u''(0), a+u'(0); got "
            f"({du0:g}, {d2u0:g}, {av:g})", node=i0,
        )
    return -math.log(d2u0) - params.m * math.log(du0) - params.n * math.log(av)


def flow_rhs(profile: RadialProfile, a_eff: float, params: BundleParams,
             gauge_ct: bool = False) -> np.ndarray:
    """Node-wise flow right-hand side on the full grid.

    Nodes whose derivatives sit below the fp resolvability floor of the
    difference stencils take their values from the fitted closure models
    (those nodes are closure-governed during stepping as well); a
    resolvably nonpositive u' or u'' raises AnsatzError.  With gauge_ct
    the value at rho = 0 is exactly 0.0 by construction.
    """
    params = _as_params(params)
    prof = profile if profile.du is not None else differentiate(profile)
    grid = prof.grid
    rho = grid.nodes
    h = grid.spacing
    m, n = params.m, params.n
    if a_eff < 0.0:
        raise ValueError("a_eff must be nonnegative")

    du = prof.du.copy()
    d2u = prof.d2u.copy()
    fp_scale = 8.0 * np.finfo(float).eps * np.abs(prof.u)
    floor_du = fp_scale / (2.0 * h)
    floor_d2u = fp_scale / h**2

    bad = (du + floor_du <= 0.0) | (d2u + floor_d2u <= 0.0)
    if bad.any():
        i = int(np.argmax(bad))
        raise AnsatzError(
            f"nonpositive u' or u'' at node {i} (rho = {rho[i]:.3f})", node=i
        )
    sub = (du < floor_du) | (d2u < floor_d2u)
    if sub.any():
        left = sub & (rho < 0.0)
        right = sub & (rho >= 0.0)
        du[left] = prof.c_minus * np.exp(rho[left])
        d2u[left] = prof.c_minus * np.exp(rho[left])
        du[right] = prof.slope_b - prof.c_plus * np.exp(-rho[right])
        d2u[right] = prof.c_plus * np.exp(-rho[right])

    p = d2u.copy()
    for _ in range(m):
        p *= du
    av = a_eff + du
    if np.any(av <= 0.0):
        i = int(np.argmax(av <= 0.0))
        raise AnsatzError(f"a + u' nonpositive at node {i}", node=i)
    for _ in range(n):
        p *= av
    F = np.log(p) - (m + 1) * rho
    if gauge_ct:
        F += -F[grid.zero_index]
    return F


def _mask_span(d2u: np.ndarray, controls: FlowControls) -> tuple[int, int, float]:
    dmax = float(np.max(d2u))
    floor = max(controls.floor_abs, controls.floor_rel * dmax)
    above = np.flatnonzero(d2u >= floor)
    if above.size == 0:
        raise StepError("no stencil-resolved nodes: u'' below floor everywhere")
    jl, jr = int(above[0]), int(above[-1])
    dmin = float(np.min(d2u[jl:jr + 1]))
    return jl, jr, dmin


def _snapshot_profile(grid: Grid, u: np.ndarray, slope_b: float,
                      fallback: RadialProfile) -> RadialProfile:
    base = RadialProfile(grid=grid, u=u, c_minus=fallback.c_minus,
                         c_plus=fallback.c_plus, slope_b=slope_b)
    prof = differentiate(base)
    c_minus, c_plus, _ = asymptotic_coefficients(prof)
    return replace(prof, c_minus=c_minus, c_plus=c_plus)


def _drive(state: FlowState, t_target: float, controls: FlowControls,
           max_steps: int, dt_force: float,
           u: np.ndarray, du: np.ndarray, d2u: np.ndarray):
    a00, da, b00, db = _schedule(state.class0, state.params, state.mode)
    grid = state.profile.grid
    wj = max(4, min(JUNCTION_WINDOW, grid.fit_window))
    return _stepper.heun_drive(
        u, grid.nodes, grid.spacing, grid.zero_index, grid.fit_window, wj,
        state.params.m, state.params.n, a00, da, b00, db,
        state.t, t_target, max_steps,
        controls.dt_max, controls.cfl_factor, controls.floor_abs,
        controls.floor_rel, controls.max_halvings,
        bool(state.gauge_ct), dt_force,
        du, d2u,
    )


_STATUS_MESSAGES = {
    _stepper.STATUS_REJECTED: "step rejected: nonpositive u' or u'' after update",
    _stepper.STATUS_SPAN: "mask span too small for the closure fit windows",
    _stepper.STATUS_BAD_STATE: "state has nonpositive u' or u'' on its span",
    _stepper.STATUS_GAUGE: "gauge normalization needs rho = 0 inside the mask span",
}


def _advance(state: FlowState, t_target: float, controls: FlowControls,
             max_steps: int, dt_force: float = -1.0) -> tuple[FlowState, int, int]:
    """Run the kernel and rebuild a FlowState; returns (state, status, steps)."""
    grid = state.profile.grid
    u = state.profile.u.copy()
    du = np.empty_like(u)
    d2u = np.empty_like(u)
    (status, t, steps, _dt_last, bad_node, _halv, jl, jr, _dmin, _dmax) = _drive(
        state, t_target, controls, max_steps, dt_force, u, du, d2u)
    if status in _STATUS_MESSAGES:
        raise StepError(_STATUS_MESSAGES[status], node=bad_node if bad_node >= 0 else None)
    if steps == 0 and status == _stepper.STATUS_OK and t == state.t:
        return state, status, 0
    b_new = class_at(state.class0, state.params, t, state.mode).b
    profile = _snapshot_profile(grid, u, b_new, state.profile)
    new = replace(state, t=t, profile=profile)
    span_du = du[jl:jr + 1]
    worst = int(np.argmax(span_du))
    if float(span_du[worst]) > b_new * (1.0 + 1e-9):
        raise StepError(
            f"u' exceeds the class slope b(t) = {b_new:g} after step", node=jl + worst
        )
    return new, status, steps


def step(state: FlowState, dt: float, controls: FlowControls | None = None) -> FlowState:
    """One explicit Heun step of exactly dt; errors leave state untouched.

    dt above the stability bound cfl * drho^2 * min(masked u'') is
    rejected before any work; a step producing nonpositive u' or u''
    raises StepError naming the node.  dt = 0 returns the state itself.
    """
    if dt < 0.0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return state
    controls = controls or FlowControls()
    T = state.regime.T
    if state.t + dt >= T:
        raise ValueError(f"t + dt = {state.t + dt} reaches the singular time T = {T}")
    prof = state.profile if state.profile.d2u is not None else differentiate(state.profile)
    _jl, _jr, dmin = _mask_span(prof.d2u, controls)
    bound = controls.cfl_factor * prof.grid.spacing**2 * dmin
    if dt > bound * (1.0 + 1e-9):
        raise StepError(
            f"dt = {dt:g} exceeds the stability bound {bound:g} "
            f"(cfl {controls.cfl_factor} * drho^2 * min u'' {dmin:g})"
        )
    if state.profile is not prof:
        state = replace(state, profile=prof)
    new, _status, steps = _advance(state, state.t + dt, controls, max_steps=1, dt_force=dt)
    if steps != 1:
        raise StepError("step did not complete")
    return new


@dataclass(frozen=True)
class Trajectory:
    """Snapshots at the output cadence, strictly increasing in t.

    The ledger slot is filled by the monitors module; flow itself only
    produces states.
    """

    states: tuple[FlowState, ...]
    output_every: int
    ledger: tuple | None = None

    def __post_init__(self) -> None:
        times = [s.t for s in self.states]
        if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
            raise ValueError("snapshot times must increase strictly")

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(s.t for s in self.states)

    @property
    def final(self) -> FlowState:
        return self.states[-1]


def evolve(state0: FlowState, t_end: float, controls: FlowControls | None = None) -> Trajectory:
    """Advance to t_end, snapshotting every output_every accepted steps.

    Refuses t_end beyond 0.999 T: the monitored estimates
    degenerate at the singular time, so approaching it further must be
    an explicit caller choice of t_end.  Step rejections retry with
    halved dt inside the driver and surface as StepError once the
    halving budget is spent.
    """
    controls = controls or FlowControls()
    regime = classify_regime(state0.params, state0.class0)
    if t_end > T_REFUSAL * regime.T * (1.0 + 1e-12):
        raise ValueError(
            f"t_end = {t_end} is within the refusal band of T = {regime.T}; "
            f"choose t_end <= {T_REFUSAL:g} T"
        )
    if t_end < state0.t:
        raise ValueError("t_end is before the state's time")

    if state0.profile.du is None:
        state0 = replace(state0, profile=differentiate(state0.profile))
    states = [state0]
    current = state0
    if t_end == state0.t:
        return Trajectory(tuple(states), controls.output_every)

    total = 0
    while current.t < t_end:
        current, status, steps = _advance(current, t_end, controls,
                                          max_steps=controls.output_every)
        total += steps
        if total >= controls.max_steps and current.t < t_end:
            raise StepError(f"step budget {controls.max_steps} exhausted at t = {current.t}")
        if steps == 0 and status != _stepper.STATUS_OK:
            raise StepError("driver made no progress")
        states.append(current)
    return Trajectory(tuple(states), controls.output_every)


def make_initial_state(params: BundleParams, class0: KahlerClass, grid: Grid,
                       gauge_ct: bool = True) -> FlowState:
    """Standard-mode state at t = 0 from canonical initial data b0 * u_hat."""
    params = _as_params(params)
    class0 = _as_class(class0)
    if class0.a <= 0.0:
        raise ValueError("standard mode needs a0 > 0 (use make_resolution_state for a0 = 0)")
    profile = canonical_profile(class0.b, grid)
    report = validate_kahler(profile, class0)
    if not report.passed:
        raise AnsatzError(f"initial data is not a Kahler metric: {report.failing()}")
    return FlowState(t=0.0, params=params, class0=class0, profile=profile,
                     mode=MODE_STANDARD, gauge_ct=gauge_ct)


def make_resolution_state(params: BundleParams, b0: float, grid: Grid,
                          delta: float | None = None) -> FlowState:
    """Resolution-mode state (m > n, a0 = 0), or perturbed mode for m = n.

    The resolution flow starts from the degenerate class (0, b0); with
    m = n that class is not Cartier-polarized and the perturbed variant
    with a constant delta in the a-slot is used instead.
    """
    params = _as_params(params)
    m, n = params.m, params.n
    if b0 <= 0.0:
        raise ValueError("b0 must be positive")
    if m < n:
        raise ValueError(
            "resolution orientation requires m >= n; classify the (n, m) bundle instead"
        )
    profile = canonical_profile(b0, grid)
    if m == n:
        if delta is None or delta <= 0.0:
            raise ValueError("m = n needs the perturbed mode: pass delta > 0")
        return FlowState(t=0.0, params=params, class0=KahlerClass(delta, b0),
                         profile=profile, mode=MODE_PERTURBED, delta=delta,
                         gauge_ct=False)
    if delta is not None:
        raise ValueError("delta only applies to the perturbed (m = n) mode")
    return FlowState(t=0.0, params=params, class0=KahlerClass(0.0, b0),
                     profile=profile, mode=MODE_RESOLUTION, gauge_ct=False)


def derivative_consistency_residual(state: FlowState, dt: float,
                                    controls: FlowControls | None = None) -> tuple[float, float]:
    """Max-norm residuals of the u' and u'' evolution equations.

    The state is advanced to t + dt by internally sub-stepped evolution
    (dt is the forward-difference span, not the solver step), and the
    residuals compare (x(t+dt) - x(t))/dt for x in {u', u''} against the
    chain-rule right-hand sides at t.  Maxima are taken over mask-span
    interior nodes clear of the fit windows and junction margins.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    controls = controls or FlowControls()
    if state.t + dt >= state.regime.T:
        raise ValueError("t + dt reaches the singular time")

    prof0 = state.profile if state.profile.d4u is not None else differentiate(state.profile)
    state0 = replace(state, t=state.t, profile=prof0)
    out, _status, _steps = _advance(state0, state.t + dt, controls,
                                    max_steps=controls.max_steps)
    prof1 = out.profile

    grid = prof0.grid
    jl, jr, _ = _mask_span(prof0.d2u, controls)
    lo = max(jl + RESIDUAL_MARGIN, grid.interior.start)
    hi = min(jr + 1 - RESIDUAL_MARGIN, grid.interior.stop)
    if hi - lo < 8:
        raise StepError("mask span too small to evaluate residuals")
    sel = slice(lo, hi)

    a_eff = state.klass.a
    m, n = state.params.m, state.params.n
    du, d2u, d3u, d4u = (prof0.du[sel], prof0.d2u[sel], prof0.d3u[sel], prof0.d4u[sel])
    av = a_eff + du
    rhs1 = d3u / d2u + m * d2u / du + n * d2u / av - (m + 1)
    rhs2 = (d4u / d2u - (d3u / d2u) ** 2
            + m * (d3u / du - (d2u / du) ** 2)
            + n * (d3u / av - d2u**2 / av**2))
    fd1 = (prof1.du[sel] - prof0.du[sel]) / dt
    fd2 = (prof1.d2u[sel] - prof0.d2u[sel]) / dt
    r1 = float(np.max(np.abs(fd1 - rhs1)))
    r2 = float(np.max(np.abs(fd2 - rhs2)))
    return r1, r2
