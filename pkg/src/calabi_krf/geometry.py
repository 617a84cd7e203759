"""Metric diagnostics: eigenvalues, lengths, diameters, volumes, cone checks.

Normalization conventions (also echoed in run summaries): the radial line
element is ds = sqrt(u'')/2 drho; fiber-sphere girth contributes pi*sqrt(u');
base traverses contribute pi*sqrt(a).  Distances are estimates built from
these pieces, not geodesic solves.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .ansatz import (BundleParams, Grid, KahlerClass, RadialProfile,
                     _as_class, _as_params, differentiate)
from .errors import AnsatzError


def _trapz(y: np.ndarray, h: float) -> float:
    return h * (float(y.sum()) - 0.5 * (float(y[0]) + float(y[-1])))


def _cached(profile: RadialProfile) -> RadialProfile:
    if profile.du is None or profile.d2u is None:
        return differentiate(profile)
    return profile


@dataclass(frozen=True)
class MetricEigenvalues:
    """Eigenvalues of the metric at one radius: base, fiber-sphere, radial."""

    base: float
    sphere: float
    radial: float


def metric_eigenvalues(
    profile: RadialProfile, klass: KahlerClass, rho: float
) -> MetricEigenvalues:
    """Eigenvalues (a + u', u', u''/4) at rho, linearly interpolated."""
    prof = _cached(profile)
    klass = _as_class(klass)
    g = prof.grid
    if not (g.rho_min <= rho <= g.rho_max):
        raise ValueError(f"rho = {rho} outside grid [{g.rho_min}, {g.rho_max}]")
    nodes = g.nodes
    du = float(np.interp(rho, nodes, prof.du))
    d2u = float(np.interp(rho, nodes, prof.d2u))
    return MetricEigenvalues(base=klass.a + du, sphere=du, radial=d2u / 4.0)


def radial_length(profile: RadialProfile, rho_lo: float, rho_hi: float) -> float:
    """Length of the radial segment [rho_lo, rho_hi]: (1/2) int sqrt(u'') drho.

    Trapezoid rule on the grid nodes inside the segment, with linearly
    interpolated values at the segment ends; exactly additive across a cut
    at any interior point.
    """
    prof = _cached(profile)
    g = prof.grid
    if rho_lo > rho_hi:
        raise ValueError("rho_lo must not exceed rho_hi")
    if rho_lo < g.rho_min - 1e-12 or rho_hi > g.rho_max + 1e-12:
        raise ValueError(f"segment [{rho_lo}, {rho_hi}] outside grid")
    if rho_lo == rho_hi:
        return 0.0
    nodes = g.nodes
    f = np.sqrt(np.maximum(prof.d2u, 0.0))
    i0 = int(np.searchsorted(nodes, rho_lo, side="right"))
    i1 = int(np.searchsorted(nodes, rho_hi, side="left"))
    xs = np.concatenate(([rho_lo], nodes[i0:i1], [rho_hi]))
    ys = np.concatenate((
        [np.interp(rho_lo, nodes, f)], f[i0:i1], [np.interp(rho_hi, nodes, f)],
    ))
    return 0.5 * float(np.trapezoid(ys, xs))


def fiber_diameter_estimate(profile: RadialProfile) -> float:
    """Fiber diameter proxy: full radial length plus worst sphere girth."""
    prof = _cached(profile)
    g = prof.grid
    return radial_length(prof, g.rho_min, g.rho_max) + math.pi * math.sqrt(
        max(float(np.max(prof.du)), 0.0)
    )


def tube_diameter_estimate(
    profile: RadialProfile, klass: KahlerClass, kappa: float
) -> float:
    """Diameter proxy of the tube {e^rho <= kappa} around the zero section.

    radial_length(rho_min, log kappa) + pi*sqrt(u'(log kappa)) + pi*sqrt(a).
    kappa must satisfy e^rho_min < kappa <= e^rho_max.
    """
    prof = _cached(profile)
    klass = _as_class(klass)
    g = prof.grid
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    lk = math.log(kappa)
    if not (g.rho_min < lk <= g.rho_max):
        raise ValueError(
            f"log(kappa) = {lk:.6g} outside ({g.rho_min:.6g}, {g.rho_max:.6g}]"
        )
    du_k = max(float(np.interp(lk, g.nodes, prof.du)), 0.0)
    return (
        radial_length(prof, g.rho_min, lk)
        + math.pi * math.sqrt(du_k)
        + math.pi * math.sqrt(klass.a)
    )


def _volume_density_prefactors(
    du: np.ndarray, a: float, m: int, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """g(u') = (a+u')^n (u')^m and g'(u'), via integer powers."""
    base = a + du
    g = base**n * du**m
    gp = n * base ** (n - 1) * du**m
    if m >= 1:
        gp = gp + m * base**n * du ** (m - 1)
    return g, gp


def reduced_volume_numeric(
    profile: RadialProfile, klass: KahlerClass, params: BundleParams
) -> float:
    """Reduced volume int (a+u')^n (u')^m u'' drho from the grid data.

    Trapezoid rule on the cached derivatives, minus the leading
    finite-difference consistency term (h^2/12) int g'(u') u'' u''' drho
    so the identity with the cohomological value holds at stated
    tolerances on analytic data.
    """
    prof = _cached(profile)
    klass = _as_class(klass)
    params = _as_params(params)
    g, gp = _volume_density_prefactors(prof.du, klass.a, params.m, params.n)
    h = prof.grid.spacing
    raw = _trapz(g * prof.d2u, h)
    corr = (h * h / 12.0) * _trapz(gp * prof.d2u * prof.d3u, h)
    return raw - corr


def reduced_volume_cohomological(klass: KahlerClass, params: BundleParams) -> float:
    """Class-level reduced volume: sum_j C(n,j) a^(n-j) b^(m+j+1)/(m+j+1)."""
    klass = _as_class(klass)
    params = _as_params(params)
    a, b = klass.a, klass.b
    m, n = params.m, params.n
    total = 0.0
    for j in range(n + 1):
        total += math.comb(n, j) * a ** (n - j) * b ** (m + j + 1) / (m + j + 1)
    return total


@dataclass(frozen=True)
class ConeData:
    """Reference cone potential and its Ricci potential on a grid.

    Value arrays come with analytic derivative arrays (the closed forms of
    the sigmoid), not finite differences.
    """

    params: BundleParams
    grid: Grid
    u_hat: np.ndarray
    du_hat: np.ndarray
    d2u_hat: np.ndarray
    u_ric: np.ndarray
    du_ric: np.ndarray
    d2u_ric: np.ndarray


def cone_data(params: BundleParams, grid: Grid) -> ConeData:
    """Canonical cone potential u_hat = log(1+e^rho) and u_ric = n rho - (m+n+2) u_hat."""
    params = _as_params(params)
    if params.m < 1:
        raise ValueError("cone reference needs m >= 1 (rank-1 fiber has no flip)")
    rho = grid.nodes
    k = params.m + params.n + 2
    u_hat = np.logaddexp(0.0, rho)
    s = expit(rho)
    d2 = s * (1.0 - s)
    return ConeData(
        params=params,
        grid=grid,
        u_hat=u_hat,
        du_hat=s,
        d2u_hat=d2,
        u_ric=params.n * rho - k * u_hat,
        du_ric=params.n - k * s,
        d2u_ric=-k * d2,
    )


def epsilon_positivity_scan(
    params: BundleParams, grid: Grid, eps: float
) -> tuple[bool, tuple[float, float, float]]:
    """Positivity of the cone form perturbed by eps times its Ricci form.

    Checks the three eigenvalue families over the grid: base direction
    u' + eps(m - K u'), sphere direction u' + eps(n - K u'), radial
    direction (1 - eps K) u'', with K = m + n + 2.  (The base family picks
    up m rather than n because the anticanonical class shifts the base
    slot by m - n on top of the n from the rho term.)  Returns (all
    strictly positive, (base, sphere, radial) minima).
    """
    params = _as_params(params)
    if eps < 0.0:
        raise ValueError("eps must be >= 0")
    s = expit(grid.nodes)
    d2 = s * (1.0 - s)
    k = params.m + params.n + 2
    base_min = float(np.min(s + eps * (params.m - k * s)))
    sphere_min = float(np.min(s + eps * (params.n - k * s)))
    radial_coeff = 1.0 - eps * k
    if abs(radial_coeff) < 1e-12:
        radial_coeff = 0.0
    radial_min = float(radial_coeff * np.max(d2)) if radial_coeff <= 0.0 else float(
        radial_coeff * np.min(d2)
    )
    positive = base_min > 0.0 and sphere_min > 0.0 and radial_min > 0.0
    return positive, (base_min, sphere_min, radial_min)


def max_epsilon(params: BundleParams, grid: Grid, tol: float = 1e-4) -> float:
    """Largest eps with a strictly positive scan, by bisection to tol."""
    params = _as_params(params)
    lo = 0.0
    hi = 1.0
    while epsilon_positivity_scan(params, grid, hi)[0]:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("positivity never lost; scan is broken")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if epsilon_positivity_scan(params, grid, mid)[0]:
            lo = mid
        else:
            hi = mid
    _, minima = epsilon_positivity_scan(params, grid, hi)
    binding = int(np.argmin(minima))
    if binding != 2:
        warnings.warn(
            f"positivity bound by the {('base', 'sphere', 'radial')[binding]} family, "
            "not the radial one",
            RuntimeWarning,
            stacklevel=2,
        )
    return 0.5 * (lo + hi)
