"""Session-scoped fixtures: evolved runs shared by the test modules.

The contraction run at production resolution dominates the suite's cost,
so it is computed once here.  Its wall-clock time covers the evolution
only (kernels are warmed first) and feeds the runtime-budget assertions.
"""

from __future__ import annotations

import time

import pytest

from calabi_krf import (
    FlowControls,
    Trajectory,
    evaluate_trajectory,
    evolve,
    make_grid,
    make_initial_state,
    make_resolution_state,
)


@pytest.fixture(scope="session")
def warm_kernels() -> None:
    """Compile the jitted stepper so timed runs measure compute only."""
    grid = make_grid(-8.0, 8.0, 257)
    state = make_initial_state((1, 2), (1.0, 6.0), grid)
    evolve(state, 1e-4, FlowControls(output_every=10**9))


@pytest.fixture(scope="session")
def contraction_run(warm_kernels) -> tuple[Trajectory, float]:
    """(m,n) = (1,2), (a0,b0) = (1,6) on [-30,30] x 4096 to t = 0.9 = 0.9T."""
    grid = make_grid(-30.0, 30.0, 4096)
    state = make_initial_state((1, 2), (1.0, 6.0), grid)
    begin = time.perf_counter()
    trajectory = evolve(state, 0.9, FlowControls(output_every=5000))
    wall = time.perf_counter() - begin
    return evaluate_trajectory(trajectory), wall


@pytest.fixture(scope="session")
def extinction_run() -> Trajectory:
    """(1,2,1,3): a and b vanish together at T = 1; run to t = 0.99."""
    grid = make_grid(-20.0, 20.0, 769)
    state = make_initial_state((1, 2), (1.0, 3.0), grid)
    return evaluate_trajectory(evolve(state, 0.99, FlowControls(output_every=2000)))


@pytest.fixture(scope="session")
def collapse_run() -> Trajectory:
    """(2,1,1,1): fibers collapse at T = 0.25; run to t = 0.24."""
    grid = make_grid(-20.0, 20.0, 769)
    state = make_initial_state((2, 1), (1.0, 1.0), grid)
    return evaluate_trajectory(evolve(state, 0.24, FlowControls(output_every=2000)))


@pytest.fixture(scope="session")
def resolution_runs() -> dict[float, Trajectory]:
    """(2,1), b0 = 1 from the cone profile, stopped at two early times."""
    runs: dict[float, Trajectory] = {}
    for t_end in (1e-4, 1e-3):
        grid = make_grid(-20.0, 20.0, 1025)
        state = make_resolution_state((2, 1), 1.0, grid)
        runs[t_end] = evaluate_trajectory(
            evolve(state, t_end, FlowControls(output_every=10**9))
        )
    return runs


@pytest.fixture(scope="session")
def perturbed_runs() -> dict[float, Trajectory]:
    """m = n = 1, b0 = 1 with delta in the a-slot, each run to t = 0.1."""
    runs: dict[float, Trajectory] = {}
    for delta in (0.1, 0.01, 0.001):
        grid = make_grid(-20.0, 20.0, 769)
        state = make_resolution_state((1, 1), 1.0, grid, delta=delta)
        runs[delta] = evaluate_trajectory(
            evolve(state, 0.1, FlowControls(output_every=5000))
        )
    return runs


@pytest.fixture(scope="session")
def residual_states(warm_kernels) -> dict[int, object]:
    """Contraction data at t = 0.1 on two grids with exactly halved spacing."""
    states = {}
    for count in (1025, 2049):
        grid = make_grid(-30.0, 30.0, count)
        state = make_initial_state((1, 2), (1.0, 6.0), grid)
        states[count] = evolve(state, 0.1, FlowControls(output_every=10**9)).final
    return states
