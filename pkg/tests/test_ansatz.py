"""Grid construction, the canonical profile, derivatives, and validation."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calabi_krf import (
    AnsatzError,
    asymptotic_coefficients,
    canonical_profile,
    differentiate,
    make_grid,
    validate_kahler,
)


def _bare(profile, **overrides):
    """Copy of profile with derivative caches cleared and fields replaced."""
    return dataclasses.replace(
        profile, du=None, d2u=None, d3u=None, d4u=None, **overrides
    )


class TestMakeGrid:
    def test_production_window(self):
        grid = make_grid(-30.0, 30.0, 4096)
        assert grid.count in (4096, 4097)
        assert math.isclose(grid.spacing, 60.0 / 4095)
        assert grid.nodes[grid.zero_index] == 0.0

    def test_small_window_adds_node_for_zero(self):
        grid = make_grid(-1.0, 1.0, 64)
        assert grid.count == 65
        assert math.isclose(grid.spacing, 2.0 / 63)
        assert grid.nodes[grid.zero_index] == 0.0

    def test_rejects_window_not_straddling_zero(self):
        with pytest.raises(ValueError, match="straddle"):
            make_grid(0.0, 30.0, 128)
        with pytest.raises(ValueError, match="straddle"):
            make_grid(-1.0, -0.5, 128)

    def test_rejects_tiny_count(self):
        with pytest.raises(ValueError, match="64"):
            make_grid(-1.0, 1.0, 32)

    @given(
        rho_min=st.floats(-40.0, -1.0),
        rho_max=st.floats(1.0, 40.0),
        count=st.integers(64, 513),
    )
    @settings(max_examples=60, deadline=None)
    def test_uniform_and_anchored(self, rho_min, rho_max, count):
        grid = make_grid(rho_min, rho_max, count)
        nodes = grid.nodes
        assert grid.count in (count, count + 1)
        assert nodes[grid.zero_index] == 0.0
        assert np.allclose(np.diff(nodes), grid.spacing, rtol=0.0, atol=1e-12)
        assert nodes[0] <= rho_min + grid.spacing
        assert nodes[-1] >= rho_max - grid.spacing


class TestCanonicalProfile:
    def test_closed_form_at_zero(self):
        grid = make_grid(-20.0, 20.0, 1025)
        profile = canonical_profile(1.0, grid)
        i0 = grid.zero_index
        assert math.isclose(profile.u[i0], math.log(2.0), rel_tol=1e-12)
        assert math.isclose(profile.du[i0], 0.5, abs_tol=1e-4)
        assert math.isclose(profile.d2u[i0], 0.25, abs_tol=1e-4)
        # u''' = u''(1 - 2u') vanishes at rho = 0
        assert abs(profile.d3u[i0]) <= 1e-4

    def test_right_tail_slope(self):
        grid = make_grid(-20.0, 20.0, 1025)
        profile = canonical_profile(2.0, grid)
        assert math.isclose(profile.slope_b, 2.0, rel_tol=1e-6)
        # u - 2 rho -> 0 at the right end
        assert abs(profile.u[-1] - 2.0 * grid.nodes[-1]) <= 1e-6

    def test_scaling_in_b0_is_exact(self):
        grid = make_grid(-20.0, 20.0, 769)
        one = canonical_profile(1.0, grid)
        two = canonical_profile(2.0, grid)
        assert np.array_equal(two.u, 2.0 * one.u)
        assert np.array_equal(two.du, 2.0 * one.du)
        assert np.array_equal(two.d2u, 2.0 * one.d2u)
        assert two.slope_b == 2.0 * one.slope_b
        assert math.isclose(two.c_plus, 2.0 * one.c_plus, rel_tol=1e-12)
        assert math.isclose(two.c_minus, 2.0 * one.c_minus, rel_tol=1e-12)

    def test_rejects_nonpositive_b0(self):
        grid = make_grid(-8.0, 8.0, 257)
        with pytest.raises((ValueError, AnsatzError)):
            canonical_profile(0.0, grid)

    @given(b0=st.floats(0.1, 10.0))
    @settings(max_examples=25, deadline=None)
    def test_always_validates(self, b0):
        grid = make_grid(-16.0, 16.0, 513)
        profile = canonical_profile(b0, grid)
        interior = grid.interior
        assert np.all(profile.du[interior] > 0.0)
        assert np.all(profile.d2u[interior] > 0.0)
        assert validate_kahler(profile, (1.0, b0)).passed


class TestDifferentiate:
    def test_exact_on_quadratics_inside(self):
        grid = make_grid(-8.0, 8.0, 257)
        rho = grid.nodes
        profile = _bare(canonical_profile(1.0, grid), u=0.25 * rho**2 + 3.0 * rho + 1.0)
        profile = differentiate(profile)
        inside = slice(grid.interior.start + 4, grid.interior.stop - 4)
        assert np.allclose(profile.du[inside], 0.5 * rho[inside] + 3.0, atol=1e-10)
        assert np.allclose(profile.d2u[inside], 0.5, atol=1e-10)
        assert np.allclose(profile.d3u[inside], 0.0, atol=1e-8)
        assert np.allclose(profile.d4u[inside], 0.0, atol=1e-6)

    def test_second_order_convergence(self):
        errors = []
        for count in (257, 513):
            grid = make_grid(-8.0, 8.0, count)
            profile = canonical_profile(1.0, grid)
            i0 = grid.zero_index
            errors.append(abs(profile.d2u[i0] - 0.25))
        assert errors[1] <= errors[0] / 3.0


class TestAsymptoticCoefficients:
    def test_canonical_limits(self):
        grid = make_grid(-30.0, 30.0, 4096)
        for b0 in (1.0, 3.0):
            c_minus, c_plus, slope_b = asymptotic_coefficients(canonical_profile(b0, grid))
            assert math.isclose(c_minus, b0, rel_tol=1e-3)
            assert math.isclose(c_plus, b0, rel_tol=1e-3)
            assert math.isclose(slope_b, b0, rel_tol=1e-3)

    def test_window_widening_tightens(self):
        fits = []
        for width in (12.0, 24.0):
            grid = make_grid(-width, width, 769)
            c_minus, c_plus, slope_b = asymptotic_coefficients(canonical_profile(1.0, grid))
            fits.append(abs(c_minus - 1.0) + abs(c_plus - 1.0) + abs(slope_b - 1.0))
        assert fits[1] < fits[0]

    def test_rejects_unbounded_slope(self):
        grid = make_grid(-8.0, 8.0, 257)
        profile = _bare(canonical_profile(1.0, grid), u=grid.nodes**2)
        with pytest.raises(AnsatzError):
            asymptotic_coefficients(differentiate(profile))


class TestValidateKahler:
    def test_canonical_passes(self):
        grid = make_grid(-20.0, 20.0, 769)
        report = validate_kahler(canonical_profile(1.0, grid), (1.0, 1.0))
        assert report.passed
        assert all(check.passed for check in report.conditions)

    def test_linear_profile_fails_convexity(self):
        grid = make_grid(-8.0, 8.0, 257)
        profile = _bare(canonical_profile(1.0, grid), u=0.5 * grid.nodes + 1.0)
        report = validate_kahler(profile, (1.0, 0.5))
        assert not report.passed
        assert 2 in [check.cid for check in report.conditions if not check.passed]

    def test_degenerate_class_fails_first_condition(self):
        grid = make_grid(-20.0, 20.0, 769)
        report = validate_kahler(canonical_profile(1.0, grid), (0.0, 1.0))
        assert not report.passed
        assert 1 in [check.cid for check in report.conditions if not check.passed]

    def test_slope_mismatch_fails_bound(self):
        grid = make_grid(-20.0, 20.0, 769)
        report = validate_kahler(canonical_profile(2.0, grid), (1.0, 1.0))
        assert not report.passed

    def test_concave_bump_fails(self):
        grid = make_grid(-20.0, 20.0, 769)
        base = canonical_profile(1.0, grid)
        bump = 0.5 * np.exp(-0.5 * grid.nodes**2)
        report = validate_kahler(_bare(base, u=base.u - bump), (1.0, 1.0))
        assert not report.passed
        assert 2 in [check.cid for check in report.conditions if not check.passed]
