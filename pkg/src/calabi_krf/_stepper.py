"""Jitted Heun driver for the radial flow.

The kernel advances the potential over many steps without returning to
Python: per stage it refits quadratic tail closures at the mask
junctions, extends them over the sub-floor tails, differences the span
with ghost-closed stencils, and applies the masked Heun update.  The
junction fits carry the quadratic term of the closure series and use a
narrow window; a linear-only fit leaves an O(e^rho_junction) slope bias
that the junction stencil amplifies by 1/h into a spurious bump in u''.
Status codes: 0 target time reached, 1 step budget exhausted (not an
error), 2 step rejected after the halving budget, 3 mask span too small
for the fit windows, 4 current state invalid (nonpositive u' or u'' on
its own span), 5 gauge requested but rho = 0 outside the span.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_STEPS = 1
STATUS_REJECTED = 2
STATUS_SPAN = 3
STATUS_BAD_STATE = 4
STATUS_GAUGE = 5


@njit(cache=True, fastmath=True)
def _fit_left(u, expp, jl, w):
    """Slope of u against e^rho over [jl, jl+w), pinned at node jl."""
    e0 = expp[jl]
    u0 = u[jl]
    sxx = 0.0
    sxy = 0.0
    for k in range(jl, jl + w):
        x = expp[k] - e0
        y = u[k] - u0
        sxx += x * x
        sxy += x * y
    if sxx > 0.0:
        return sxy / sxx
    return 0.0


@njit(cache=True, fastmath=True)
def _fit_right(u, rho, expm, jr, w, slope):
    """Coefficient of e^-rho in u - slope*rho over (jr-w, jr], pinned at jr."""
    e0 = expm[jr]
    u0 = u[jr]
    r0 = rho[jr]
    spp = 0.0
    spv = 0.0
    for k in range(jr - w + 1, jr + 1):
        p = expm[k] - e0
        v = u[k] - u0 - slope * (rho[k] - r0)
        spp += p * p
        spv += p * v
    if spp > 0.0:
        return spv / spp
    return 0.0


@njit(cache=True, fastmath=True)
def _fit_left2(u, expp, jl, w):
    """Quadratic closure u0 + c (x - x0) + q (x - x0)^2, x = e^rho, at jl.

    Falls back to the linear fit when the normal system is degenerate or
    the quadratic term would break positivity of u'' on the extension.
    """
    e0 = expp[jl]
    u0 = u[jl]
    s2 = 0.0
    s3 = 0.0
    s4 = 0.0
    b1 = 0.0
    b2 = 0.0
    for k in range(jl, jl + w):
        z = expp[k] - e0
        y = u[k] - u0
        z2 = z * z
        s2 += z2
        s3 += z2 * z
        s4 += z2 * z2
        b1 += y * z
        b2 += y * z2
    det = s2 * s4 - s3 * s3
    if det > 1e-10 * s2 * s4:
        c = (s4 * b1 - s3 * b2) / det
        q = (s2 * b2 - s3 * b1) / det
        if c > 2.0 * abs(q) * e0:
            return c, q
    if s2 > 0.0:
        return b1 / s2, 0.0
    return 0.0, 0.0


@njit(cache=True, fastmath=True)
def _fit_right2(u, rho, expm, jr, w, slope):
    """Quadratic closure in y = e^-rho for u - slope*rho, pinned at jr.

    Same fallback policy as _fit_left2; the positivity guard keeps
    u'' = y (c + 4 q y) positive over the extension y in (0, y0].
    """
    e0 = expm[jr]
    u0 = u[jr]
    r0 = rho[jr]
    e0sq = e0 * e0
    s2 = 0.0
    s3 = 0.0
    s4 = 0.0
    b1 = 0.0
    b2 = 0.0
    for k in range(jr - w + 1, jr + 1):
        p = expm[k] - e0
        pp = expm[k] * expm[k] - e0sq
        v = u[k] - u0 - slope * (rho[k] - r0)
        s2 += p * p
        s3 += p * pp
        s4 += pp * pp
        b1 += v * p
        b2 += v * pp
    det = s2 * s4 - s3 * s3
    if det > 1e-10 * s2 * s4:
        c = (s4 * b1 - s3 * b2) / det
        q = (s2 * b2 - s3 * b1) / det
        if c > 0.0 and c + 4.0 * q * e0 > 0.0:
            return c, q
    if s2 > 0.0:
        return b1 / s2, 0.0
    return 0.0, 0.0


@njit(cache=True, fastmath=True)
def _extend(u, rho, expp, expm, jl, jr, w, slope):
    """Overwrite the sub-floor tails of u with the fitted closure models."""
    cl, ql = _fit_left2(u, expp, jl, w)
    cr, qr = _fit_right2(u, rho, expm, jr, w, slope)
    e0 = expp[jl]
    u0 = u[jl]
    for i in range(jl):
        z = expp[i] - e0
        u[i] = u0 + (cl + ql * z) * z
    e1 = expm[jr]
    e1sq = e1 * e1
    u1 = u[jr]
    r1 = rho[jr]
    for i in range(jr + 1, u.shape[0]):
        u[i] = (u1 + slope * (rho[i] - r1) + cr * (expm[i] - e1)
                + qr * (expm[i] * expm[i] - e1sq))
    return cl, cr


@njit(cache=True, fastmath=True)
def _derivs(u, rho, expp, expm, h, w, slope, du, d2u):
    """Centered du/d2u on the full grid with closure-model ghost nodes."""
    n = u.shape[0]
    cl = _fit_left(u, expp, 0, w)
    cr = _fit_right(u, rho, expm, n - 1, w, slope)
    emh = math.exp(-h)
    ul = u[0] + cl * expp[0] * (emh - 1.0)
    ur = u[n - 1] + slope * h + cr * expm[n - 1] * (emh - 1.0)
    inv2h = 0.5 / h
    invh2 = 1.0 / (h * h)
    du[0] = (u[1] - ul) * inv2h
    d2u[0] = (u[1] - 2.0 * u[0] + ul) * invh2
    for i in range(1, n - 1):
        du[i] = (u[i + 1] - u[i - 1]) * inv2h
        d2u[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * invh2
    du[n - 1] = (ur - u[n - 2]) * inv2h
    d2u[n - 1] = (ur - 2.0 * u[n - 1] + u[n - 2]) * invh2


@njit(cache=True, fastmath=True)
def _mask(d2u, floor_abs, floor_rel):
    """Contiguous span of stencil-resolved nodes and its d2u extrema."""
    n = d2u.shape[0]
    dmax = d2u[0]
    for i in range(1, n):
        if d2u[i] > dmax:
            dmax = d2u[i]
    floor = floor_abs
    if floor_rel * dmax > floor:
        floor = floor_rel * dmax
    jl = 0
    while jl < n and d2u[jl] < floor:
        jl += 1
    jr = n - 1
    while jr >= 0 and d2u[jr] < floor:
        jr -= 1
    dmin = dmax
    for i in range(jl, jr + 1):
        if d2u[i] < dmin:
            dmin = d2u[i]
    return jl, jr, dmin, dmax


@njit(cache=True, fastmath=True)
def _rhs(F, du, d2u, rho, a, mm, nn, gauge, i0, jl, jr):
    """log[(a+u')^n (u')^m u''] - (m+1) rho (+ gauge constant) on the span.

    Returns the first node with nonpositive u' or u'' (-1 when clean).
    The gauge constant is -F[i0], so the gauged value at rho = 0 is an
    exact 0.0 by construction.
    """
    mp1 = float(mm + 1)
    for i in range(jl, jr + 1):
        dui = du[i]
        d2i = d2u[i]
        if dui <= 0.0 or d2i <= 0.0:
            return i
        p = d2i
        for _ in range(mm):
            p *= dui
        av = a + dui
        if av <= 0.0:
            return i
        for _ in range(nn):
            p *= av
        F[i] = math.log(p) - mp1 * rho[i]
    if gauge:
        ct = -F[i0]
        for i in range(jl, jr + 1):
            F[i] += ct
    return -1


@njit(cache=True, fastmath=True)
def heun_drive(
    u,
    rho,
    h,
    i0,
    w,
    wj,
    mm,
    nn,
    a00,
    da,
    b00,
    db,
    t0,
    t_target,
    max_steps,
    dt_max,
    cfl,
    floor_abs,
    floor_rel,
    max_halvings,
    gauge,
    dt_force,
    du_out,
    d2u_out,
):
    """Advance u from t0 toward t_target; see module docstring for codes.

    Returns (status, t, steps, dt_last, bad_node, halvings, jl, jr,
    dmin, dmax).  u, du_out, d2u_out hold the last accepted state.
    """
    n = u.shape[0]
    expp = np.exp(rho)
    expm = np.exp(-rho)
    bufu = np.empty((2, n))
    bufdu = np.empty((2, n))
    bufd2 = np.empty((2, n))
    u1 = np.empty(n)
    du1 = np.empty(n)
    d2u1 = np.empty(n)
    F1 = np.empty(n)
    F2 = np.empty(n)

    cur = 0
    for i in range(n):
        bufu[0, i] = u[i]

    t = t0
    b_now = b00 + db * t
    _derivs(bufu[cur], rho, expp, expm, h, w, b_now, bufdu[cur], bufd2[cur])
    jl, jr, dmin, dmax = _mask(bufd2[cur], floor_abs, floor_rel)

    status = STATUS_STEPS
    steps = 0
    dt_last = 0.0
    bad_node = -1
    halvings_total = 0

    while steps < max_steps:
        if t >= t_target:
            status = STATUS_OK
            break
        if jr - jl + 1 < 2 * wj + 4:
            status = STATUS_SPAN
            break
        if gauge and (i0 < jl or i0 > jr):
            status = STATUS_GAUGE
            break

        if dt_force > 0.0:
            dt = dt_force
        else:
            dt = cfl * h * h * dmin
            if dt > dt_max:
                dt = dt_max
        rem = t_target - t
        landing = dt >= rem
        if landing:
            dt = rem

        a_now = a00 + da * t
        bad = _rhs(F1, bufdu[cur], bufd2[cur], rho, a_now, mm, nn, gauge, i0, jl, jr)
        if bad >= 0:
            status = STATUS_BAD_STATE
            bad_node = bad
            break

        halv = 0
        while True:
            t_new = t_target if landing else t + dt
            a_new = a00 + da * t_new
            b_new = b00 + db * t_new

            for i in range(jl, jr + 1):
                u1[i] = bufu[cur, i] + dt * F1[i]
            _extend(u1, rho, expp, expm, jl, jr, wj, b_new)
            _derivs(u1, rho, expp, expm, h, w, b_new, du1, d2u1)
            jl1, jr1, dmin1, dmax1 = _mask(d2u1, floor_abs, floor_rel)

            ok = jr1 - jl1 + 1 >= 2 * wj + 4 and (not gauge or (jl1 <= i0 <= jr1))
            bad = -1
            if ok:
                bad = _rhs(F2, du1, d2u1, rho, a_new, mm, nn, gauge, i0, jl1, jr1)
                ok = bad < 0
            nxt = 1 - cur
            jl2, jr2, dmin2, dmax2 = jl, jr, dmin, dmax
            if ok:
                lo = jl if jl > jl1 else jl1
                hi = jr if jr < jr1 else jr1
                for i in range(lo, hi + 1):
                    bufu[nxt, i] = bufu[cur, i] + 0.5 * dt * (F1[i] + F2[i])
                _extend(bufu[nxt], rho, expp, expm, lo, hi, wj, b_new)
                _derivs(bufu[nxt], rho, expp, expm, h, w, b_new, bufdu[nxt], bufd2[nxt])
                jl2, jr2, dmin2, dmax2 = _mask(bufd2[nxt], floor_abs, floor_rel)
                ok = dmin2 > 0.0 and math.isfinite(dmax2)
                if ok:
                    for i in range(jl2, jr2 + 1):
                        if bufdu[nxt, i] <= 0.0 or bufd2[nxt, i] <= 0.0:
                            ok = False
                            bad = i
                            break
            if ok:
                cur = nxt
                t = t_new
                steps += 1
                dt_last = dt
                jl, jr, dmin, dmax = jl2, jr2, dmin2, dmax2
                break
            halv += 1
            halvings_total += 1
            if halv > max_halvings or dt_force > 0.0 or dt < 1e-300:
                status = STATUS_REJECTED
                bad_node = bad
                break
            dt *= 0.5
            landing = False
        if status == STATUS_REJECTED:
            break
        if t >= t_target:
            status = STATUS_OK
            break

    if status == STATUS_STEPS and t >= t_target:
        status = STATUS_OK
    for i in range(n):
        u[i] = bufu[cur, i]
        du_out[i] = bufdu[cur, i]
        d2u_out[i] = bufd2[cur, i]
    return status, t, steps, dt_last, bad_node, halvings_total, jl, jr, dmin, dmax
