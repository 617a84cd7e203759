"""Batch experiment runner for the radial flow.

Subcommands: classify, evolve, resolve, cone-check, sweep, check.  All
read a flat key=value config; evolve/resolve/sweep write plot-ready CSV
plus a JSON summary.  Exit codes: 0 success, 1 gate failure, 2 config
error, 3 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .ansatz import (
    BundleParams,
    Grid,
    KahlerClass,
    canonical_profile,
    make_grid,
    validate_kahler,
)
from .errors import AnsatzError, CalabiKRFError, ConfigError, StepError
from .flow import (
    FlowControls,
    FlowState,
    MODE_PERTURBED,
    MODE_RESOLUTION,
    MODE_STANDARD,
    Regime,
    RegimeTag,
    Trajectory,
    classify_regime,
    evolve,
    make_initial_state,
    make_resolution_state,
    normalization_ct,
    _mask_span,
)
from .geometry import (
    epsilon_positivity_scan,
    fiber_diameter_estimate,
    max_epsilon,
    reduced_volume_cohomological,
    reduced_volume_numeric,
    tube_diameter_estimate,
)
from .monitors import evaluate_trajectory, ledger_verdict

TRAJECTORY_HEADER = "t,a,b,ct,sup_uprime,min_upp,fiber_diam,tube_diam_k1,vol_num,vol_coh,vol_relerr"
LEDGER_HEADER = "t,estimate_id,value,ok"

_THEOREM_CASES = {
    RegimeTag.SMALL_CONTRACTION: 1,
    RegimeTag.POINT_EXTINCTION: 2,
}


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _int(text: str) -> int:
    return int(text, 10)


def _float(text: str) -> float:
    return float(text)


def _str(text: str) -> str:
    return text


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p, 10) for p in text.split(",") if p.strip())


# key -> (caster, default); _REQUIRED defaults are checked after parsing.
_SCHEMA = {
    "m": (_int, None),
    "n": (_int, None),
    "a0": (_float, None),
    "b0": (_float, None),
    "mode": (_str, MODE_STANDARD),
    "delta": (_float, None),
    "rho_min": (_float, -30.0),
    "rho_max": (_float, 30.0),
    "count": (_int, 2048),
    "dt_max": (_float, 5e-3),
    "cfl_factor": (_float, 0.4),
    "output_every": (_int, 100),
    "t_end_fraction": (_float, 0.9),
    "out": (_str, "calabi_krf"),
    "m_list": (_int_list, None),
    "n_list": (_int_list, None),
    "a0_list": (_float_list, None),
    "b0_list": (_float_list, None),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated run parameters; every run is deterministic (seedless)."""

    m: int
    n: int
    a0: float | None
    b0: float
    mode: str
    delta: float | None
    rho_min: float
    rho_max: float
    count: int
    dt_max: float
    cfl_factor: float
    output_every: int
    t_end_fraction: float
    out: str
    m_list: tuple[int, ...] | None = None
    n_list: tuple[int, ...] | None = None
    a0_list: tuple[float, ...] | None = None
    b0_list: tuple[float, ...] | None = None

    def _scalar(self, key: str):
        value = getattr(self, key)
        if value is None:
            raise ConfigError(f"key {key!r}: required (the list form only feeds sweep)")
        return value

    @property
    def params(self) -> BundleParams:
        return BundleParams(self._scalar("m"), self._scalar("n"))

    @property
    def class0(self) -> KahlerClass:
        """The initial class as run: resolution uses a0 = 0, perturbed a0 = delta."""
        if self.mode == MODE_RESOLUTION:
            return KahlerClass(0.0, self._scalar("b0"))
        if self.mode == MODE_PERTURBED:
            return KahlerClass(float(self.delta), self._scalar("b0"))
        return KahlerClass(float(self._scalar("a0")), self._scalar("b0"))

    def grid(self) -> Grid:
        return make_grid(self.rho_min, self.rho_max, self.count)

    def controls(self) -> FlowControls:
        return FlowControls(dt_max=self.dt_max, cfl_factor=self.cfl_factor,
                            output_every=self.output_every)

    def initial_state(self) -> FlowState:
        grid = self.grid()
        if self.mode == MODE_STANDARD:
            return make_initial_state(self.params, self.class0, grid)
        return make_resolution_state(self.params, self.b0, grid, delta=self.delta)


def parse_config(text: str) -> ExperimentConfig:
    """Parse a flat key=value document into a validated config.

    Blank lines and #-comments are ignored.  Unknown keys, duplicate
    keys, casting failures, and precondition violations all raise
    ConfigError naming the key and line.
    """
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {ln}: duplicate key {key!r} (first on line {lines[key]})")
        caster, _default = _SCHEMA[key]
        try:
            values[key] = caster(val)
        except ValueError:
            raise ConfigError(
                f"line {ln}: key {key!r}: cannot parse {val!r} as {caster.__name__.lstrip('_')}"
            ) from None
        lines[key] = ln

    def fail(key: str, message: str) -> ConfigError:
        at = f"line {lines[key]}: " if key in lines else ""
        return ConfigError(f"{at}key {key!r}: {message}")

    for key, (_caster, default) in _SCHEMA.items():
        if key not in values:
            values[key] = default

    cfg = ExperimentConfig(**values)

    for key in ("m", "n", "b0"):
        if getattr(cfg, key) is None and getattr(cfg, f"{key}_list", None) is None:
            raise fail(key, "required")
    if cfg.m is not None and cfg.m < 1:
        raise fail("m", "must be a positive integer")
    if cfg.n is not None and cfg.n < 1:
        raise fail("n", "must be a positive integer")
    if cfg.b0 is not None and cfg.b0 <= 0.0:
        raise fail("b0", "must be positive")
    if cfg.mode not in (MODE_STANDARD, MODE_RESOLUTION, MODE_PERTURBED):
        raise fail("mode", f"unknown mode {cfg.mode!r}")
    if cfg.mode == MODE_STANDARD:
        if cfg.a0 is None and cfg.a0_list is None:
            raise fail("a0", "required for standard mode")
        if cfg.a0 is not None and cfg.a0 <= 0.0:
            raise fail("a0", "must be positive in standard mode")
        if cfg.delta is not None:
            raise fail("delta", "only valid in perturbed mode")
    else:
        for key in ("m", "n", "b0"):
            if getattr(cfg, key) is None:
                raise fail(key, f"required (scalar) in {cfg.mode} mode")
        if cfg.a0 not in (None, 0.0):
            raise fail("a0", f"must be 0 (or omitted) in {cfg.mode} mode")
        if cfg.mode == MODE_RESOLUTION:
            if cfg.m <= cfg.n:
                raise fail("mode", "resolution requires m > n")
            if cfg.delta is not None:
                raise fail("delta", "only valid in perturbed mode")
        else:
            if cfg.m != cfg.n:
                raise fail("mode", "perturbed requires m = n")
            if cfg.delta is None or cfg.delta <= 0.0:
                raise fail("delta", "perturbed mode requires delta > 0")
    if not (cfg.rho_min < 0.0 < cfg.rho_max):
        raise fail("rho_min" if cfg.rho_min >= 0.0 else "rho_max",
                   "window must straddle rho = 0")
    if cfg.count < 64:
        raise fail("count", "needs at least 64 nodes")
    if cfg.dt_max <= 0.0:
        raise fail("dt_max", "must be positive")
    if not (0.0 < cfg.cfl_factor <= 0.5):
        raise fail("cfl_factor", "must lie in (0, 0.5]")
    if cfg.output_every < 1:
        raise fail("output_every", "must be a positive integer")
    if not (0.0 < cfg.t_end_fraction <= 0.999):
        raise fail("t_end_fraction", "must lie in (0, 0.999]")
    for key in ("m_list", "n_list"):
        vals = getattr(cfg, key)
        if vals is not None and (not vals or any(v < 1 for v in vals)):
            raise fail(key, "entries must be positive integers")
    for key in ("a0_list", "b0_list"):
        vals = getattr(cfg, key)
        if vals is not None and (not vals or any(v <= 0.0 for v in vals)):
            raise fail(key, "entries must be positive")
    return cfg


def _regime_report(regime: Regime, m: int, n: int) -> dict:
    case = _THEOREM_CASES.get(regime.tag)
    if regime.tag is RegimeTag.COLLAPSE_TO_BASE:
        case = 3 if m < n else 4
    if regime.tag is RegimeTag.SMALL_CONTRACTION:
        contracts_to = f"cone Y_{{{m},{n}}}"
    elif regime.tag in (RegimeTag.POINT_EXTINCTION, RegimeTag.CONE_NON_CARTIER):
        contracts_to = "point"
    else:
        contracts_to = f"base P^{n}"
    coef = regime.limit_base_coefficient
    return {
        "case": case,
        "T": regime.T,
        "contracts_to": contracts_to,
        "regime": regime.tag.value,
        "limit_coefficient": coef,
        "boundary_warning": regime.boundary_warning,
    }


def _trajectory_rows(trajectory: Trajectory) -> list[str]:
    rows = []
    controls = FlowControls()
    for state in trajectory.states:
        prof = state.profile
        klass = state.klass
        ct = (normalization_ct(prof, klass, state.params)
              if state.mode == MODE_STANDARD else 0.0)
        _jl, _jr, min_upp = _mask_span(prof.d2u, controls)
        vol_num = reduced_volume_numeric(prof, klass, state.params)
        vol_coh = reduced_volume_cohomological(klass, state.params)
        cells = (
            state.t, klass.a, klass.b, ct,
            float(np.max(prof.du)), min_upp,
            fiber_diameter_estimate(prof),
            tube_diameter_estimate(prof, klass, 1.0),
            vol_num, vol_coh, abs(vol_num - vol_coh) / vol_coh,
        )
        rows.append(",".join(_fmt(c) for c in cells))
    return rows


def write_outputs(trajectory: Trajectory, ledger, prefix: str) -> dict[str, str]:
    """Write <prefix>.trajectory.csv, .ledger.csv, .summary.json.

    Output is a pure function of the inputs (12-significant-digit
    decimal cells), so identical runs produce byte-identical files.
    The min_upp column is the masked-span minimum of u'' under the
    default floor policy.
    """
    parent = os.path.dirname(prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)
    paths = {
        "trajectory": f"{prefix}.trajectory.csv",
        "ledger": f"{prefix}.ledger.csv",
        "summary": f"{prefix}.summary.json",
    }
    try:
        with open(paths["trajectory"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(TRAJECTORY_HEADER + "\n")
            for row in _trajectory_rows(trajectory):
                fh.write(row + "\n")

        with open(paths["ledger"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(LEDGER_HEADER + "\n")
            if ledger is not None:
                if len(ledger) != len(trajectory.states):
                    raise ValueError("ledger and trajectory lengths differ")
                for entry in ledger:
                    for eid, (value, ok) in sorted(entry.entries.items()):
                        fh.write(f"{_fmt(entry.t)},{eid},{_fmt(value)},{1 if ok else 0}\n")

        summary = _summary_payload(trajectory)
        with open(paths["summary"], "w", encoding="utf-8", newline="\n") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"writing outputs under {prefix!r}: {exc}") from exc
    return paths


def _summary_payload(trajectory: Trajectory) -> dict:
    if not trajectory.states:
        return {"snapshots": 0}
    state0 = trajectory.states[0]
    regime = classify_regime(state0.params, state0.class0)
    verdict = ledger_verdict(trajectory)
    first = verdict.first_violation
    return {
        "mode": state0.mode,
        "params": {"m": state0.params.m, "n": state0.params.n},
        "class0": {"a0": state0.class0.a, "b0": state0.class0.b},
        "regime": _regime_report(regime, state0.params.m, state0.params.n),
        "snapshots": len(trajectory.states),
        "final_time": trajectory.final.t,
        "verdict": {
            "passed": verdict.passed,
            "first_violation": None if first is None else {
                "t": first.t,
                "estimate_id": first.estimate_id,
                "value": first.value,
                "allowed": first.allowed,
                "node": first.node,
            },
            "warnings": list(verdict.warnings),
        },
    }


def _emit(payload: dict, prefix: str | None, name: str) -> None:
    text = json.dumps(payload, indent=2)
    print(text)
    if prefix:
        parent = os.path.dirname(prefix)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(f"{prefix}.{name}.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")


def _cmd_classify(cfg: ExperimentConfig, prefix: str | None) -> int:
    regime = classify_regime(cfg.params, cfg.class0)
    _emit(_regime_report(regime, cfg.m, cfg.n), prefix, "classify")
    return 0


def _run_trajectory(cfg: ExperimentConfig) -> Trajectory:
    state0 = cfg.initial_state()
    regime = classify_regime(cfg.params, cfg.class0)
    trajectory = evolve(state0, cfg.t_end_fraction * regime.T, cfg.controls())
    return evaluate_trajectory(trajectory)


def _cmd_evolve(cfg: ExperimentConfig, prefix: str | None, want_mode: str) -> int:
    if want_mode == MODE_STANDARD and cfg.mode != MODE_STANDARD:
        raise ConfigError("command 'evolve' requires mode = standard (use 'resolve')")
    if want_mode != MODE_STANDARD and cfg.mode == MODE_STANDARD:
        raise ConfigError("command 'resolve' requires mode = resolution or perturbed")
    trajectory = _run_trajectory(cfg)
    paths = write_outputs(trajectory, trajectory.ledger, prefix or cfg.out)
    verdict = ledger_verdict(trajectory)
    print(json.dumps({"passed": verdict.passed, "outputs": paths}, indent=2))
    return 0 if verdict.passed else 1


def _cmd_cone_check(cfg: ExperimentConfig, prefix: str | None) -> int:
    grid = cfg.grid()
    k = cfg.m + cfg.n + 2
    eps0 = max_epsilon(cfg.params, grid)
    table = []
    for frac in (0.5, 0.9, 0.99, 1.0, 1.01, 1.1):
        eps = frac / k
        positive, minima = epsilon_positivity_scan(cfg.params, grid, eps)
        table.append({
            "epsilon": eps,
            "positive": positive,
            "lambda_base_min": minima[0],
            "lambda_sphere_min": minima[1],
            "lambda_radial_min": minima[2],
        })
    payload = {
        "m": cfg.m,
        "n": cfg.n,
        "eps0": eps0,
        "expected": 1.0 / k,
        "table": table,
    }
    _emit(payload, prefix, "cone_check")
    return 0


def _sweep_worker(task) -> tuple[tuple, list[str], dict]:
    (m, n, a0, b0, rho_min, rho_max, count,
     dt_max, cfl_factor, output_every, t_end_fraction) = task
    grid = make_grid(rho_min, rho_max, count)
    controls = FlowControls(dt_max=dt_max, cfl_factor=cfl_factor,
                            output_every=output_every)
    state0 = make_initial_state((m, n), (a0, b0), grid)
    regime = classify_regime((m, n), (a0, b0))
    trajectory = evolve(state0, t_end_fraction * regime.T, controls)
    trajectory = evaluate_trajectory(trajectory)
    verdict = ledger_verdict(trajectory)
    lead = ",".join(_fmt(c) for c in (m, n, a0, b0))
    rows = [f"{lead},{row}" for row in _trajectory_rows(trajectory)]
    info = {"m": m, "n": n, "a0": a0, "b0": b0,
            "regime": regime.tag.value, "T": regime.T,
            "passed": verdict.passed}
    return (m, n, a0, b0), rows, info


def _cmd_sweep(cfg: ExperimentConfig, prefix: str | None) -> int:
    if cfg.mode != MODE_STANDARD:
        raise ConfigError("sweep runs standard mode only")
    ms = cfg.m_list or (cfg.m,)
    ns = cfg.n_list or (cfg.n,)
    a0s = cfg.a0_list or (float(cfg.a0),)
    b0s = cfg.b0_list or (cfg.b0,)
    tuples = sorted(set(product(ms, ns, a0s, b0s)))
    tasks = [
        t + (cfg.rho_min, cfg.rho_max, cfg.count,
             cfg.dt_max, cfg.cfl_factor, cfg.output_every, cfg.t_end_fraction)
        for t in tuples
    ]
    workers = min(len(tasks), os.cpu_count() or 1, 8)
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, rows, info in pool.map(_sweep_worker, tasks):
                results[key] = (rows, info)
    else:
        for task in tasks:
            key, rows, info = _sweep_worker(task)
            results[key] = (rows, info)

    out = prefix or cfg.out
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    path = f"{out}.sweep.csv"
    all_passed = True
    infos = []
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("m,n,a0,b0," + TRAJECTORY_HEADER + "\n")
        for key in sorted(results):
            rows, info = results[key]
            for row in rows:
                fh.write(row + "\n")
            infos.append(info)
            all_passed = all_passed and info["passed"]
    _emit({"tuples": infos, "passed": all_passed, "rows": path}, None, "sweep")
    return 0 if all_passed else 1


def _check_battery() -> list[tuple[str, str | None]]:
    """Run the curated gate suite; returns (name, failure message) pairs."""
    results: list[tuple[str, str | None]] = []

    def run(name, fn):
        try:
            fn()
            results.append((name, None))
        except Exception as exc:
            results.append((name, f"{type(exc).__name__}: {exc}"))

    def classification_oracle():
        expected = {
            (1, 2, 1.0, 6.0): (RegimeTag.SMALL_CONTRACTION, 1.0),
            (1, 2, 1.0, 3.0): (RegimeTag.POINT_EXTINCTION, 1.0),
            (1, 2, 2.0, 3.0): (RegimeTag.COLLAPSE_TO_BASE, 1.0),
            (2, 1, 1.0, 1.0): (RegimeTag.COLLAPSE_TO_BASE, 0.25),
            (2, 2, 1.0, 4.0): (RegimeTag.COLLAPSE_TO_BASE, 1.0),
            (2, 1, 0.0, 1.0): (RegimeTag.RESOLUTION_THEN_COLLAPSE, 0.25),
            (2, 2, 0.0, 1.0): (RegimeTag.CONE_NON_CARTIER, 0.25),
        }
        for (m, n, a0, b0), (tag, T) in expected.items():
            regime = classify_regime((m, n), (a0, b0))
            assert regime.tag is tag and math.isclose(regime.T, T), (m, n, a0, b0)

    def initial_validation():
        grid = make_grid(-30.0, 30.0, 1024)
        for b0 in (1.0, 6.0):
            report = validate_kahler(canonical_profile(b0, grid), (1.0, b0))
            assert report.passed, report.failing()

    def volume_identity():
        grid = make_grid(-30.0, 30.0, 2048)
        prof = canonical_profile(6.0, grid)
        vn = reduced_volume_numeric(prof, (1.0, 6.0), (1, 2))
        vc = reduced_volume_cohomological((1.0, 6.0), (1, 2))
        assert abs(vn - vc) / vc <= 1e-6, abs(vn - vc) / vc

    def cone_positivity():
        grid = make_grid(-20.0, 20.0, 1024)
        for m, n in ((1, 1), (2, 1)):
            eps0 = max_epsilon((m, n), grid)
            assert abs(eps0 - 1.0 / (m + n + 2)) <= 1e-3, (m, n, eps0)

    def gated_run(state0, t_end, final_klass=None):
        controls = FlowControls(output_every=500)
        trajectory = evaluate_trajectory(evolve(state0, t_end, controls))
        verdict = ledger_verdict(trajectory)
        assert verdict.passed, verdict.first_violation
        final = trajectory.final
        report = validate_kahler(final.profile, final_klass or final.klass)
        assert report.passed, report.failing()

    grid = make_grid(-18.0, 18.0, 768)
    run("classification oracle", classification_oracle)
    run("initial data validation", initial_validation)
    run("volume identity at t=0", volume_identity)
    run("cone epsilon positivity", cone_positivity)
    run("contraction run gates", lambda: gated_run(
        make_initial_state((1, 2), (1.0, 6.0), grid), 0.05))
    run("collapse run gates", lambda: gated_run(
        make_initial_state((2, 1), (1.0, 1.0), grid), 0.0125))
    run("resolution run gates", lambda: gated_run(
        make_resolution_state((2, 1), 1.0, grid), 1e-3))
    run("perturbed run gates", lambda: gated_run(
        make_resolution_state((1, 1), 1.0, grid, delta=0.01), 0.01))
    return results


def _cmd_check() -> int:
    failures = 0
    for name, message in _check_battery():
        if message is None:
            print(f"ok: {name}")
        else:
            failures += 1
            print(f"FAIL: {name}: {message}")
    print(f"{'PASS' if failures == 0 else 'FAIL'}: check battery")
    return 0 if failures == 0 else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calabi-krf",
        description="Radial Kahler-Ricci flow experiments on projective bundles",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("classify", True),
        ("evolve", True),
        ("resolve", True),
        ("cone-check", True),
        ("sweep", True),
        ("check", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config,
                       help="path to a flat key=value config file")
        p.add_argument("--out", default=None,
                       help="output path prefix (overrides the config's out key)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return _cmd_check()
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
        cfg = parse_config(text)
        prefix = args.out
        if args.command == "classify":
            return _cmd_classify(cfg, prefix)
        if args.command == "evolve":
            return _cmd_evolve(cfg, prefix, MODE_STANDARD)
        if args.command == "resolve":
            return _cmd_evolve(cfg, prefix, MODE_RESOLUTION)
        if args.command == "cone-check":
            return _cmd_cone_check(cfg, prefix)
        if args.command == "sweep":
            return _cmd_sweep(cfg, prefix)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except (AnsatzError, StepError, CalabiKRFError, ValueError, ArithmeticError,
            OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
