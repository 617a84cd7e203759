"""Ledger evaluation of the a priori estimates and verdict rendering.

Each estimate is recorded as its empirical constant: the supremum (or
minimum, for the Schwarz entry) over resolvable interior nodes of the
bounded quantity divided by its claimed envelope.  The constants in the
continuum statements are existential, so verdicts gate on drift of the
empirical values along a trajectory rather than on absolute sizes; the
maximum-principle ratio u''/u' additionally carries the absolute gate
max(1, initial value) + 5%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .ansatz import Grid, RadialProfile, canonical_profile, differentiate
from .flow import FlowState, Regime, RegimeTag, Trajectory, classify_regime
from .geometry import reduced_volume_cohomological, reduced_volume_numeric

UPRIME_UPPER_34 = "uprime_upper_34"
UPP_OVER_UP_35 = "upp_over_up_35"
COLLAPSE_UP_41 = "collapse_up_41"
COLLAPSE_GAP_42 = "collapse_gap_42"
COLLAPSE_UPP_45 = "collapse_upp_45"
SCHWARZ_31 = "schwarz_31"
VOLUME_IDENTITY = "volume_identity"
RESOLUTION_55 = "resolution_55"
PERTURBED_59 = "perturbed_59"

# Sup-ratio entries only consider nodes whose derivatives clear the fp
# rounding floor of the stencils by this factor; beyond it the computed
# sign and size of u', u'' are noise and any ratio against a decaying
# envelope amplifies that noise into spurious suprema.
RESOLVABLE_FACTOR = 100.0

# Snapshot-local bound on the volume-identity relative error.
VOLUME_TOL = 1e-4


@dataclass(frozen=True)
class LedgerEntry:
    """Estimate values at one output time.

    entries maps estimate id to (value, snapshot-local ok); worst_nodes
    maps the same ids to the node realizing the extremum.  Trajectory
    -level gates (drift, Schwarz floor) live in ledger_verdict.
    """

    t: float
    mode: str
    entries: dict[str, tuple[float, bool]]
    worst_nodes: dict[str, int]


@lru_cache(maxsize=32)
def _reference_profile(b0: float, grid: Grid) -> RadialProfile:
    return canonical_profile(b0, grid)


def _resolvable_interior(prof: RadialProfile) -> np.ndarray:
    """Interior nodes where u' and u'' are resolvably positive."""
    grid = prof.grid
    h = grid.spacing
    fp = RESOLVABLE_FACTOR * np.finfo(float).eps * np.abs(prof.u)
    mask = np.zeros(grid.count, dtype=bool)
    mask[grid.interior] = True
    mask &= prof.du >= fp / (2.0 * h)
    mask &= prof.d2u >= fp / h**2
    return mask


def _sup_ratio(num: np.ndarray, env: np.ndarray, mask: np.ndarray) -> tuple[float, int]:
    vals = np.where(mask, num / env, -np.inf)
    j = int(np.argmax(vals))
    return float(vals[j]), j


def estimate_ids(mode: str, regime: Regime) -> tuple[str, ...]:
    """Estimate ids evaluated for a mode/regime combination."""
    ids = [UPP_OVER_UP_35, SCHWARZ_31, VOLUME_IDENTITY]
    if mode == "standard":
        if regime.tag in (RegimeTag.SMALL_CONTRACTION, RegimeTag.POINT_EXTINCTION):
            ids.append(UPRIME_UPPER_34)
        elif regime.tag is RegimeTag.COLLAPSE_TO_BASE:
            ids.extend((COLLAPSE_UP_41, COLLAPSE_GAP_42, COLLAPSE_UPP_45))
    elif mode == "resolution":
        ids.append(RESOLUTION_55)
    elif mode == "perturbed":
        ids.append(PERTURBED_59)
    return tuple(ids)


def evaluate_estimates(state: FlowState, regime: Regime) -> LedgerEntry:
    """Empirical estimate constants for one snapshot.

    Sup-type entries report sup(claimed-bounded quantity / envelope)
    over resolvable interior nodes; schwarz_31 reports the minimum of
    the three metric ratios against the canonical reference b0 * u_hat;
    volume_identity reports the relative defect of the substitution
    identity between the numeric and cohomological reduced volumes.
    """
    prof = state.profile if state.profile.du is not None else differentiate(state.profile)
    grid = prof.grid
    rho = grid.nodes
    m, n = state.params.m, state.params.n
    klass = state.klass
    mask = _resolvable_interior(prof)
    if not mask.any():
        raise ValueError("no resolvable interior nodes to monitor")

    entries: dict[str, tuple[float, bool]] = {}
    nodes: dict[str, int] = {}

    def put(eid: str, value: float, ok: bool, node: int) -> None:
        entries[eid] = (value, bool(ok and math.isfinite(value)))
        nodes[eid] = node

    for eid in estimate_ids(state.mode, regime):
        if eid == UPP_OVER_UP_35:
            v, j = _sup_ratio(prof.d2u, prof.du, mask)
            put(eid, v, v > 0.0, j)
        elif eid == SCHWARZ_31:
            ref = _reference_profile(state.class0.b, grid)
            ref_mask = mask & _resolvable_interior(ref)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(ref_mask, prof.du / ref.du, np.inf)
                ratios = np.minimum(ratios, np.where(ref_mask, prof.d2u / ref.d2u, np.inf))
                ratios = np.minimum(ratios, np.where(ref_mask, (klass.a + prof.du) / ref.du, np.inf))
            j = int(np.argmin(ratios))
            put(eid, float(ratios[j]), float(ratios[j]) > 0.0, j)
        elif eid == VOLUME_IDENTITY:
            vc = reduced_volume_cohomological(klass, state.params)
            vn = reduced_volume_numeric(prof, klass, state.params)
            rel = abs(vn - vc) / vc
            put(eid, rel, rel <= VOLUME_TOL, -1)
        elif eid == UPRIME_UPPER_34:
            env = np.exp((m + 1) / (m + n + 1) * rho)
            v, j = _sup_ratio(prof.du, env, mask)
            put(eid, v, v > 0.0, j)
        elif eid == COLLAPSE_UP_41:
            env = np.minimum(regime.T - state.t, np.exp(rho))
            v, j = _sup_ratio(prof.du, env, mask)
            put(eid, v, v > 0.0, j)
        elif eid == COLLAPSE_GAP_42:
            gap = klass.b - prof.du
            env = np.exp(-rho / (m + 1))
            v, j = _sup_ratio(gap, env, mask)
            put(eid, v, v > 0.0, j)
        elif eid == COLLAPSE_UPP_45:
            env = np.minimum(regime.T - state.t, np.exp(-np.abs(rho)))
            v, j = _sup_ratio(prof.d2u, env, mask)
            put(eid, v, v > 0.0, j)
        elif eid == RESOLUTION_55:
            env = np.exp((n + 1) / (m + n + 1) * rho)
            left = mask & (rho <= 0.0)
            if not left.any():
                left = mask
            v, j = _sup_ratio(prof.du, env, left)
            put(eid, v, v > 0.0, j)
        elif eid == PERTURBED_59:
            env = np.minimum(1.0, np.exp((n + 1) / (2 * n + 1) * rho))
            v, j = _sup_ratio(prof.du, env, mask)
            put(eid, v, v > 0.0, j)

    return LedgerEntry(t=state.t, mode=state.mode, entries=entries, worst_nodes=nodes)


def evaluate_trajectory(trajectory: Trajectory) -> Trajectory:
    """Attach a ledger (one LedgerEntry per snapshot) to a trajectory."""
    regime = classify_regime(trajectory.states[0].params, trajectory.states[0].class0)
    ledger = tuple(evaluate_estimates(s, regime) for s in trajectory.states)
    return replace(trajectory, ledger=ledger)


@dataclass(frozen=True)
class VerdictTolerances:
    """Trajectory-level gate bands.

    drift_slack: allowed growth of the maximum-principle ratio beyond
    max(1, its initial value).  volume_tol: absolute cap on the volume
    identity defect.  schwarz_divisor: the Schwarz minimum may not fall
    below its initial value divided by this (non-collapsing runs only).
    loose_factor: cap on growth of the remaining empirical constants
    relative to their initial values.
    """

    drift_slack: float = 0.05
    volume_tol: float = VOLUME_TOL
    schwarz_divisor: float = 10.0
    loose_factor: float = 3.0


@dataclass(frozen=True)
class Violation:
    t: float
    estimate_id: str
    value: float
    allowed: float
    node: int


@dataclass(frozen=True)
class VerdictReport:
    passed: bool
    first_violation: Violation | None
    warnings: tuple[str, ...]


def ledger_verdict(trajectory: Trajectory,
                   tolerances: VerdictTolerances | None = None) -> VerdictReport:
    """Gate every ledger entry across the trajectory; first failure wins.

    A single-snapshot trajectory passes vacuously with a warning.  The
    Schwarz floor applies only to the non-collapsing (SmallContraction)
    regime; all entries must additionally stay finite.
    """
    tol = tolerances or VerdictTolerances()
    traj = trajectory if trajectory.ledger is not None else evaluate_trajectory(trajectory)
    ledger = traj.ledger
    state0 = traj.states[0]
    regime = classify_regime(state0.params, state0.class0)

    warnings: list[str] = []
    if regime.boundary_warning:
        warnings.append("class sits at the extinction boundary within float tolerance")
    if len(ledger) < 2:
        warnings.append("single snapshot: gates hold vacuously")
        return VerdictReport(True, None, tuple(warnings))

    first = ledger[0].entries

    def violation(entry: LedgerEntry, eid: str, value: float, allowed: float) -> VerdictReport:
        v = Violation(entry.t, eid, value, allowed, entry.worst_nodes.get(eid, -1))
        return VerdictReport(False, v, tuple(warnings))

    for entry in ledger:
        for eid, (value, _ok) in sorted(entry.entries.items()):
            if not math.isfinite(value):
                return violation(entry, eid, value, math.nan)
            if eid == UPP_OVER_UP_35:
                allowed = max(1.0, first[eid][0]) * (1.0 + tol.drift_slack)
                if value > allowed:
                    return violation(entry, eid, value, allowed)
            elif eid == VOLUME_IDENTITY:
                if value > tol.volume_tol:
                    return violation(entry, eid, value, tol.volume_tol)
            elif eid == SCHWARZ_31:
                if regime.tag is RegimeTag.SMALL_CONTRACTION:
                    allowed = first[eid][0] / tol.schwarz_divisor
                    if value < allowed:
                        return violation(entry, eid, value, allowed)
            else:
                allowed = tol.loose_factor * first[eid][0]
                if value > allowed:
                    return violation(entry, eid, value, allowed)
    return VerdictReport(True, None, tuple(warnings))
