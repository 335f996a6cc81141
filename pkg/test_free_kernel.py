#!/usr/bin/env python3
"""
Tests for the free fractional heat kernel: closed forms, quadrature, envelope fits
"""
import cmath
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from schemas.requests import ComplexTime, KernelQuery, QuadratureSpec
from services.errors import DomainError, PrecisionExhaustedError
from services.kernel_service import (
    KernelService,
    bg_bound,
    fit_bg_constant,
    kernel_at_origin,
    kernel_closed_form,
    kernel_free,
    kernel_gauss,
    kernel_poisson,
    load_reference_table,
    poisson_constant,
    radial_mass,
    refine_grid,
    sphere_area,
    tail_coefficient,
    tail_slope,
)

REFERENCE_TABLE = Path(__file__).parent / "fixtures" / "reference_kernels.txt"
# (d, alpha) pairs of the algebraic tail checks
TAIL_CASES = [(1, 1.0), (1, 1.5), (2, 1.0)]


def query(alpha, d, z, r=0.0):
    time = z if isinstance(z, ComplexTime) else ComplexTime.from_complex(z)
    return KernelQuery(alpha=alpha, d=d, z=time, r=r)


def assert_close(actual, expected, scale, rtol=1e-6):
    # absolute floor at the quadrature resolution relative to the origin value
    assert abs(actual - expected) <= rtol * abs(expected) + 1e-10 * abs(scale)


class TestClosedForms:
    def test_poisson_constant_in_one_dimension(self):
        assert poisson_constant(1) == pytest.approx(1 / math.pi)
        assert kernel_poisson(1, 2.0, 0.0) == pytest.approx(1 / (2 * math.pi))

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_poisson_normalization(self, d):
        t = 0.7

        def density(r):
            return sphere_area(d) * r ** (d - 1) * kernel_poisson(d, t, r).real

        mass, _ = integrate.quad(density, 0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        assert mass == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_gaussian_normalization(self, d):
        t = 0.3

        def density(r):
            return sphere_area(d) * r ** (d - 1) * kernel_gauss(d, t, r).real

        mass, _ = integrate.quad(density, 0, np.inf, epsabs=1e-13, epsrel=1e-12)
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_poisson_far_field_slope(self):
        radii = np.geomspace(1e2, 1e4, 9)
        values = np.abs(kernel_poisson(3, 1.0, radii))
        slope = np.polyfit(np.log(radii), np.log(values), 1)[0]
        assert slope == pytest.approx(-4.0, abs=0.01)

    def test_poisson_accepts_arrays(self):
        radii = np.array([0.0, 1.0, 2.0])
        values = kernel_poisson(2, ComplexTime(modulus=1.0, theta=0.3), radii)
        assert values.shape == (3,)
        assert values[1] == pytest.approx(kernel_poisson(2, ComplexTime(modulus=1.0, theta=0.3), 1.0))

    def test_origin_matches_gaussian(self):
        for t in (0.1, 1.0, 7.5):
            assert kernel_at_origin(2, 1, t) == pytest.approx((4 * math.pi * t) ** -0.5)

    def test_origin_matches_poisson(self):
        for t in (0.5, 2.0):
            assert kernel_at_origin(1, 3, t) == pytest.approx(kernel_poisson(3, t, 0.0))
            assert kernel_at_origin(1, 3, t) == pytest.approx(poisson_constant(3) / t ** 3)

    def test_origin_conjugation(self):
        z = ComplexTime(modulus=1.3, theta=0.9)
        for alpha, d in [(0.5, 1), (1.5, 2), (1.0, 3)]:
            assert kernel_at_origin(alpha, d, z.conjugate()) == pytest.approx(kernel_at_origin(alpha, d, z).conjugate())

    def test_closed_form_dispatch(self):
        z = ComplexTime(modulus=1.0, theta=0.4)
        assert kernel_closed_form(1, 2, z, 0.5) == pytest.approx(kernel_poisson(2, z, 0.5))
        assert kernel_closed_form(2, 2, z, 0.5) == pytest.approx(kernel_gauss(2, z, 0.5))
        with pytest.raises(DomainError):
            kernel_closed_form(1.5, 2, z, 0.5)

    def test_left_half_plane_rejected(self):
        with pytest.raises(DomainError):
            kernel_poisson(1, complex(-1.0, 0.0), 1.0)
        with pytest.raises(DomainError):
            kernel_at_origin(1, 1, complex(0.0, 1.0))

    def test_tail_coefficient_matches_poisson(self):
        for d in (1, 2, 3):
            assert tail_coefficient(1.0, d) == pytest.approx(poisson_constant(d))
        with pytest.raises(DomainError):
            tail_coefficient(2.0, 1)


class TestEnvelope:
    def test_origin_value(self):
        for alpha, d, t in [(0.5, 1, 2.0), (1.5, 3, 0.4)]:
            assert bg_bound(alpha, d, t, 0.0) == pytest.approx(t ** (-d / alpha))

    def test_far_field_power(self):
        r = 1e6
        assert bg_bound(1.2, 2, 1.0, r) == pytest.approx(r ** -3.2, rel=1e-5)

    def test_homogeneity(self):
        alpha, d, t, r = 1.3, 2, 0.8, 1.7
        for lam in (0.25, 4.0):
            scaled = bg_bound(alpha, d, lam * t, lam ** (1 / alpha) * r)
            assert scaled == pytest.approx(lam ** (-d / alpha) * bg_bound(alpha, d, t, r))

    def test_gaussian_order_rejected(self):
        with pytest.raises(DomainError):
            bg_bound(2.0, 1, 1.0, 1.0)
        with pytest.raises(DomainError):
            fit_bg_constant(2.0, 1, [1.0], [0.0, 1.0])

    def test_refine_grid(self):
        assert refine_grid([4.0, 1.0]) == pytest.approx([1.0, 2.0, 4.0])
        assert refine_grid([0.0, 2.0]) == pytest.approx([0.0, 1.0, 2.0])


class TestKernelFree:
    def test_reference_table(self):
        rows = load_reference_table(REFERENCE_TABLE)
        assert len(rows) >= 30
        for row in rows:
            z = complex(row["re_z"], row["im_z"])
            expected = complex(row["re_k"], row["im_k"])
            result = kernel_free(query(row["alpha"], row["d"], z, row["r"]))
            assert_close(result.value, expected, kernel_at_origin(row["alpha"], row["d"], z))

    @pytest.mark.slow
    @pytest.mark.parametrize("alpha", [1.0, 2.0])
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_closed_form_sweep(self, alpha, d):
        for theta in (-math.pi / 3, 0.0, math.pi / 6, math.pi / 3):
            z = ComplexTime(modulus=0.8, theta=theta)
            scale = kernel_at_origin(alpha, d, z)
            for scaled_r in (0.0, 0.5, 2.0, 10.0):
                r = scaled_r * z.modulus ** (1 / alpha)
                result = kernel_free(query(alpha, d, z, r))
                assert_close(result.value, kernel_closed_form(alpha, d, z, r), scale)
                assert result.abs_err <= 1e-10 * abs(scale)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.0])
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_origin_value(self, alpha, d):
        z = ComplexTime(modulus=1.4, theta=0.5)
        result = kernel_free(query(alpha, d, z))
        assert result.value == pytest.approx(kernel_at_origin(alpha, d, z), rel=1e-8)

    @pytest.mark.parametrize("alpha,d", [(0.8, 2), (1.9, 1)])
    def test_origin_value_between_orders(self, alpha, d):
        z = ComplexTime(modulus=1.4, theta=0.5)
        result = kernel_free(query(alpha, d, z))
        assert result.value == pytest.approx(kernel_at_origin(alpha, d, z), rel=1e-8)

    def test_conjugation(self):
        z = ComplexTime(modulus=0.9, theta=0.8)
        for alpha, d, r in [(0.7, 1, 0.6), (1.5, 2, 1.2), (1.2, 3, 0.3)]:
            upper = kernel_free(query(alpha, d, z, r))
            lower = kernel_free(query(alpha, d, z.conjugate(), r))
            assert_close(lower.value, upper.value.conjugate(), kernel_at_origin(alpha, d, z))

    @pytest.mark.parametrize("lam", [0.25, 4.0])
    def test_scaling(self, lam):
        alpha, d, r = 1.5, 2, 0.7
        z = ComplexTime(modulus=1.0, theta=0.6)
        base = kernel_free(query(alpha, d, z, r)).value
        scaled = kernel_free(query(alpha, d, z.scaled(lam), lam ** (1 / alpha) * r)).value
        assert_close(scaled, lam ** (-d / alpha) * base, lam ** (-d / alpha) * kernel_at_origin(alpha, d, z))

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.0])
    def test_positive_at_real_time(self, alpha):
        t = 0.6
        for d in (1, 2, 3):
            for scaled_r in (0.0, 0.5, 1.0, 2.0, 4.0):
                result = kernel_free(query(alpha, d, ComplexTime.real(t), scaled_r * t ** (1 / alpha)))
                assert result.value.real > 0
                assert result.value.imag == 0

    def test_angle_outside_envelope(self):
        z = ComplexTime(modulus=1.0, theta=1.5)
        with pytest.raises(PrecisionExhaustedError) as info:
            kernel_free(query(1.0, 1, z, 0.2))
        assert "envelope" in info.value.reason

    def test_distance_outside_envelope_keeps_estimate(self):
        with pytest.raises(PrecisionExhaustedError) as info:
            kernel_free(query(1.0, 1, ComplexTime.real(1.0), 60.0))
        estimate = info.value.partial_estimate
        assert cmath.isfinite(estimate)
        assert estimate.real == pytest.approx(kernel_poisson(1, 1.0, 60.0).real, rel=1e-4)

    def test_panel_budget(self):
        spec = QuadratureSpec(max_panels=5)
        with pytest.raises(PrecisionExhaustedError):
            kernel_free(query(1.0, 2, ComplexTime.real(1.0), 10.0), spec)

    def test_reports_panels_and_error(self):
        result = kernel_free(query(1.0, 3, ComplexTime.real(1.0), 2.0))
        assert result.panels > 0
        assert result.abs_err <= 1e-12 * abs(kernel_at_origin(1.0, 3, 1.0)) * 10


class TestBGFit:
    def test_cauchy_constant(self):
        ts = [0.5, 1.0, 2.0]
        rs = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
        fit = fit_bg_constant(1.0, 1, ts, rs)
        exact = max((t + r) ** 2 / (math.pi * (t * t + r * r)) for t in ts for r in rs)
        assert fit.constant == pytest.approx(exact, rel=0.1)
        assert fit.refined_constant >= fit.constant * (1 - 1e-9)
        assert fit.stable

    @pytest.mark.slow
    @pytest.mark.parametrize("d,alpha", TAIL_CASES)
    def test_tail_slope(self, d, alpha):
        spec = QuadratureSpec(max_scaled_distance=150.0)
        slope = tail_slope(alpha, d, 1.0, np.geomspace(10.0, 100.0, 10), spec)
        assert slope == pytest.approx(-(d + alpha), abs=0.05)

    @pytest.mark.slow
    @pytest.mark.parametrize("d,alpha", TAIL_CASES)
    def test_envelope_constant_is_stable(self, d, alpha):
        spec = QuadratureSpec(max_scaled_distance=150.0)
        rs = [0.0, *np.geomspace(0.25, 64.0, 17)]
        fit = fit_bg_constant(alpha, d, [0.5, 1.0, 2.0], rs, spec)
        assert fit.stable
        assert fit.relative_change < 0.05
        if alpha == 1.0:
            # (t + r)^{d+1} P_t(r) / t peaks at r = t, which both grids contain
            peak = poisson_constant(d) * 2 ** ((d + 1) / 2)
            assert fit.constant == pytest.approx(peak, rel=1e-8)

    @pytest.mark.slow
    @pytest.mark.parametrize("alpha,d", [(1.0, 1), (1.5, 1), (2.0, 1), (1.0, 2)])
    def test_normalization(self, alpha, d):
        assert radial_mass(alpha, d, 1.0) == pytest.approx(1.0, abs=1e-4)


class TestReferenceTable:
    def test_rows_are_typed(self):
        rows = load_reference_table(REFERENCE_TABLE)
        assert {row["alpha"] for row in rows} == {1.0, 2.0}
        assert all(isinstance(row["d"], int) for row in rows)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "broken.txt"
        path.write_text("# header\n1 1 1 0\n")
        with pytest.raises(DomainError):
            load_reference_table(path)


class TestKernelService:
    def test_values_match_single_queries(self):
        z = ComplexTime(modulus=1.0, theta=math.pi / 4)
        radii = [0.0, 0.5, 2.0]
        values = KernelService(jobs=2).values(1.0, 1, z, radii)
        assert len(values) == 3
        for r, value in zip(radii, values):
            assert value == kernel_free(query(1.0, 1, z, r))

    def test_cauchy_origin(self):
        value = KernelService().values(1.0, 1, ComplexTime.real(1.0), [0.0])[0]
        assert value.value.real == pytest.approx(1 / math.pi, rel=1e-10)

    @pytest.mark.slow
    def test_mass_is_one(self):
        assert KernelService().mass(1.0, 1, 1.0) == pytest.approx(1.0, abs=1e-4)
