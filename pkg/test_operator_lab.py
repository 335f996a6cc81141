#!/usr/bin/env python3
"""
Tests for the periodic-grid operator lab
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError

from schemas.requests import ComplexTime, GridSpec, KernelQuery, PotentialSpec
from services.errors import AssemblyError, DomainError
from services.kernel_service import kernel_free
from services.operator_service import (
    OperatorService,
    build_operator,
    column_l2_tail,
    compose,
    contraction_norm,
    export_kernel,
    grid_nodes,
    hardy_cutoff_sensitivity,
    hardy_origin_exponent,
    load_kernel,
    periodized_poisson_1d,
    poisson_l2_tail,
    semigroup_column,
    semigroup_diagonal,
    semigroup_kernel,
    torus_distance_matrix,
    torus_distances,
    unitary_check,
    weighted_l2_tail,
)

CONTRACTION_SLACK = 1e-9
UNITARY_TOL = 1e-9


def spectrum(grid, alpha):
    freqs = 2 * math.pi * np.fft.fftfreq(grid.n, d=grid.spacing)
    mesh = np.meshgrid(*([freqs] * grid.d), indexing="ij")
    return np.sort((sum(axis ** 2 for axis in mesh) ** (alpha / 2)).ravel())


def random_times(rng, count):
    return [ComplexTime(modulus=rng.uniform(0.2, 2.0), theta=rng.uniform(-1.3, 1.3)) for _ in range(count)]


class TestGrid:
    def test_nodes_and_center(self):
        grid = GridSpec(d=2, n=8, box_length=4.0)
        nodes = grid_nodes(grid)
        assert nodes.shape == (64, 2)
        assert np.all(nodes[grid.center_index] == 0)
        assert nodes.min() == -2.0 and nodes.max() == 1.5

    def test_torus_distance_wraps(self):
        grid = GridSpec(d=1, n=8, box_length=8.0)
        dist = torus_distances(grid, 0)
        assert dist[7] == 1.0
        assert dist.max() == 4.0

    def test_distance_matrix_rows(self):
        grid = GridSpec(d=2, n=6, box_length=3.0)
        matrix = torus_distance_matrix(grid)
        assert np.array_equal(matrix, matrix.T)
        assert np.array_equal(matrix[7], torus_distances(grid, 7))
        assert not matrix.flags.writeable

    def test_node_cap(self):
        with pytest.raises(ValidationError):
            GridSpec(d=2, n=128, box_length=8.0)
        with pytest.raises(ValidationError):
            GridSpec(d=1, n=7, box_length=8.0)


class TestBuildOperator:
    @pytest.mark.parametrize("d,n,alpha", [(1, 32, 1.0), (2, 8, 0.6), (3, 4, 1.5), (1, 16, 2.0)])
    def test_free_spectrum(self, d, n, alpha):
        grid = GridSpec(d=d, n=n, box_length=5.0)
        op = build_operator(grid, alpha)
        expected = spectrum(grid, alpha)
        assert op.eigenvalues == pytest.approx(expected, abs=1e-10 * expected[-1])

    def test_plane_wave_is_eigenvector(self):
        grid = GridSpec(d=1, n=32, box_length=4.0)
        op = build_operator(grid, 1.3)
        x = grid_nodes(grid)[:, 0]
        xi = 2 * math.pi * 3 / grid.box_length
        wave = np.cos(xi * x)
        applied = op.eigenvectors @ (op.eigenvalues * (op.eigenvectors.T @ wave))
        assert applied == pytest.approx(xi ** 1.3 * wave, abs=1e-10)

    def test_hardy_raises_spectrum(self, plane_grid, hardy_plane_operator):
        free = build_operator(plane_grid, 1.0)
        assert np.all(hardy_plane_operator.eigenvalues >= free.eigenvalues - 1e-10)
        assert hardy_plane_operator.cutoff == plane_grid.spacing

    def test_hardy_needs_small_alpha(self, line_grid):
        with pytest.raises(DomainError):
            build_operator(line_grid, 1.0, PotentialSpec(kind="hardy", a=1.0))

    def test_potential_with_gaussian_order(self, line_grid):
        with pytest.raises(DomainError):
            build_operator(line_grid, 2.0, PotentialSpec(kind="bounded_sample", values=[1.0] * 128))

    def test_nonnegativity_assertion(self, line_grid):
        sink = PotentialSpec(kind="bounded_sample", values=[-5.0] * line_grid.n_nodes)
        with pytest.raises(AssemblyError):
            build_operator(line_grid, 1.0, sink, assert_nonnegative=True)
        op = build_operator(line_grid, 1.0, sink)
        assert op.lambda_min == pytest.approx(-5.0)

    def test_arrays_are_read_only(self, cauchy_operator):
        assert not cauchy_operator.eigenvalues.flags.writeable
        assert not cauchy_operator.eigenvectors.flags.writeable


class TestSemigroup:
    def test_real_time_entries_are_real(self, cauchy_operator):
        kernel = semigroup_kernel(cauchy_operator, ComplexTime.real(0.7))
        assert np.all(kernel.values.imag == 0)
        assert kernel.values == pytest.approx(kernel.values.T, abs=1e-12)

    def test_complex_symmetric(self, cauchy_operator):
        kernel = semigroup_kernel(cauchy_operator, ComplexTime(modulus=1.0, theta=0.9))
        assert np.max(np.abs(kernel.values - kernel.values.T)) <= 1e-9 * np.max(np.abs(kernel.values))

    def test_conjugation(self, bump_operator):
        z = ComplexTime(modulus=0.8, theta=-0.6)
        upper = semigroup_kernel(bump_operator, z)
        lower = semigroup_kernel(bump_operator, z.conjugate())
        assert np.max(np.abs(lower.values - upper.values.conj())) <= 1e-9

    def test_semigroup_law(self, cauchy_operator, bump_operator, rng):
        for op in (cauchy_operator, bump_operator):
            first, second = random_times(rng, 2)
            product = compose(semigroup_kernel(op, first), semigroup_kernel(op, second))
            direct = semigroup_kernel(op, first + second)
            assert np.max(np.abs(product.values - direct.values)) <= 1e-8 * np.max(np.abs(direct.values))

    def test_row_sums_at_real_time(self, cauchy_operator):
        for t in (0.1, 1.0, 4.0):
            kernel = semigroup_kernel(cauchy_operator, ComplexTime.real(t))
            assert kernel.values.sum(axis=1).real * kernel.weight == pytest.approx(np.ones(kernel.size), abs=1e-10)

    def test_periodized_cauchy(self, fine_line_grid, fine_cauchy_operator):
        z = ComplexTime(modulus=1.0, theta=math.pi / 4)
        column = semigroup_column(fine_cauchy_operator, z, fine_line_grid.center_index)
        exact = periodized_poisson_1d(z, grid_nodes(fine_line_grid)[:, 0], fine_line_grid.box_length)
        assert np.max(np.abs(column - exact)) <= 1e-9

    def test_periodized_gaussian(self):
        grid = GridSpec(d=1, n=256, box_length=16.0)
        op = build_operator(grid, 2.0)
        t = 0.5
        x = grid_nodes(grid)[:, 0]
        images = sum(np.exp(-(x + m * grid.box_length) ** 2 / (4 * t)) for m in range(-3, 4))
        exact = images / math.sqrt(4 * math.pi * t)
        column = semigroup_column(op, ComplexTime.real(t), grid.center_index)
        assert np.max(np.abs(column - exact)) <= 1e-6 * np.max(exact)

    def test_matches_free_kernel(self):
        grid = GridSpec(d=1, n=1024, box_length=64.0)
        op = build_operator(grid, 1.5)
        t = ComplexTime.real(0.5)
        column = semigroup_column(op, t, grid.center_index)
        dist = torus_distances(grid, grid.center_index)
        for r in (0.0, 0.5, 1.0, 2.0):
            index = int(np.argmin(np.abs(dist - r)))
            free = kernel_free(KernelQuery(alpha=1.5, d=1, z=t, r=r)).value
            assert column[index].real == pytest.approx(free.real, rel=1e-3)

    def test_column_and_diagonal_agree_with_matrix(self, bump_operator):
        z = ComplexTime(modulus=0.5, theta=0.4)
        kernel = semigroup_kernel(bump_operator, z)
        assert semigroup_column(bump_operator, z, 5) == pytest.approx(kernel.values[:, 5], abs=1e-12)
        assert semigroup_diagonal(bump_operator, z) == pytest.approx(np.diag(kernel.values), abs=1e-12)

    def test_contraction(self, cauchy_operator, bump_operator, hardy_plane_operator, rng):
        for op in (cauchy_operator, bump_operator, hardy_plane_operator):
            for z in random_times(rng, 3):
                assert contraction_norm(semigroup_kernel(op, z)) <= 1 + CONTRACTION_SLACK

    def test_unitary_flow(self, cauchy_operator, hardy_plane_operator):
        assert unitary_check(cauchy_operator, 0.0) <= 1e-12
        assert unitary_check(cauchy_operator, 1.0) <= UNITARY_TOL
        assert unitary_check(hardy_plane_operator, 5.0) <= UNITARY_TOL

    def test_trotter_domination(self, cauchy_operator, bump_operator):
        t = ComplexTime.real(1.0)
        free = semigroup_kernel(cauchy_operator, t).values.real
        damped = semigroup_kernel(bump_operator, t).values
        assert np.all(np.abs(damped) <= free * (1 + 1e-6) + 1e-12 * free.max())


# (grid, potential) pairs of the large-grid property runs
LARGE_GRIDS = {
    "line": (GridSpec(d=1, n=1024, box_length=64.0), PotentialSpec(kind="bounded_sample", amplitude=2.0, width=1.0)),
    "plane": (GridSpec(d=2, n=64, box_length=16.0), PotentialSpec(kind="hardy", a=0.5)),
}


@pytest.fixture(scope="module", params=sorted(LARGE_GRIDS))
def large_operator(request):
    grid, potential = LARGE_GRIDS[request.param]
    return build_operator(grid, 1.0, potential, assert_nonnegative=True)


@pytest.mark.slow
class TestLargeGrids:
    def test_semigroup_law(self, large_operator, rng):
        first, second = random_times(rng, 2)
        product = compose(semigroup_kernel(large_operator, first), semigroup_kernel(large_operator, second))
        direct = semigroup_kernel(large_operator, first + second)
        assert np.max(np.abs(product.values - direct.values)) <= 1e-8 * np.max(np.abs(direct.values))

    def test_conjugation(self, large_operator):
        z = ComplexTime(modulus=0.8, theta=-0.6)
        upper = semigroup_kernel(large_operator, z)
        lower = semigroup_kernel(large_operator, z.conjugate())
        assert np.max(np.abs(lower.values - upper.values.conj())) <= 1e-9 * np.max(np.abs(upper.values))

    @pytest.mark.parametrize("s", [0.0, 1.0, 5.0])
    def test_unitary_flow(self, large_operator, s):
        assert unitary_check(large_operator, s) <= UNITARY_TOL

    def test_contraction(self, large_operator, rng):
        for z in random_times(rng, 2):
            assert contraction_norm(semigroup_kernel(large_operator, z)) <= 1 + CONTRACTION_SLACK


class TestWeightedTail:
    def test_zero_radius_is_column_norm(self, cauchy_operator):
        kernel = semigroup_kernel(cauchy_operator, ComplexTime(modulus=1.0, theta=0.5))
        expected = np.max(np.sum(np.abs(kernel.values) ** 2, axis=0)) * kernel.weight
        assert weighted_l2_tail(kernel, 0.0) == pytest.approx(expected)

    def test_radius_bound(self, cauchy_operator):
        kernel = semigroup_kernel(cauchy_operator, ComplexTime.real(1.0))
        with pytest.raises(DomainError):
            weighted_l2_tail(kernel, 16.0)
        with pytest.raises(DomainError):
            weighted_l2_tail(kernel, -1.0)

    def test_nonincreasing(self, bump_operator):
        kernel = semigroup_kernel(bump_operator, ComplexTime(modulus=1.0, theta=-0.7))
        tails = [weighted_l2_tail(kernel, r) for r in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)]
        assert all(a >= b for a, b in zip(tails, tails[1:]))

    def test_column_tail_matches_matrix(self, cauchy_operator, line_grid):
        z = ComplexTime(modulus=1.0, theta=0.3)
        kernel = semigroup_kernel(cauchy_operator, z)
        column = semigroup_column(cauchy_operator, z, line_grid.center_index)
        assert column_l2_tail(column, line_grid, line_grid.center_index, 2.0) == \
            pytest.approx(weighted_l2_tail(kernel, 2.0), rel=1e-9)

    def test_cauchy_tail_integral(self):
        grid = GridSpec(d=1, n=1024, box_length=32.0)
        op = build_operator(grid, 1.0)
        t = ComplexTime.real(0.5)
        kernel = semigroup_kernel(op, t)
        # midpoint between nodes keeps the lattice sum second order
        r = 1.0 + grid.spacing / 2
        assert weighted_l2_tail(kernel, r) == pytest.approx(poisson_l2_tail(t, r, grid.box_length), rel=1e-3)
        assert poisson_l2_tail(t, r) == pytest.approx(poisson_l2_tail(t, r, grid.box_length), rel=0.05)


class TestHardyDiagnostics:
    def test_cutoff_sensitivity(self, plane_grid):
        report = hardy_cutoff_sensitivity(plane_grid, 1.0, 1.0, 1.0)
        assert [item.cutoff for item in report] == pytest.approx([0.25, 0.5, 1.0])
        diagonals = [item.origin_diagonal for item in report]
        assert diagonals == sorted(diagonals)
        assert all(item.lambda_min >= -1e-10 for item in report)

    def test_repulsive_origin_exponent(self, hardy_plane_operator):
        assert hardy_origin_exponent(hardy_plane_operator, 4.0) < 0

    def test_exponent_needs_hardy(self, cauchy_operator):
        with pytest.raises(DomainError):
            hardy_origin_exponent(cauchy_operator, 1.0)


class TestKernelExport:
    def test_export_and_load(self, tmp_path):
        grid = GridSpec(d=2, n=4, box_length=2.0)
        op = build_operator(grid, 0.8, PotentialSpec(kind="bounded_sample", amplitude=1.0, width=0.5))
        kernel = semigroup_kernel(op, ComplexTime(modulus=0.3, theta=-0.2))
        path = export_kernel(kernel, tmp_path / "kernel.txt")
        lines = path.read_text().splitlines()
        assert lines[0] == "# fraclab-kernel v1"
        assert lines[1].startswith("# d=2 n=4 box_length=2.0")
        assert len(lines) == 2 + 16
        loaded = load_kernel(path)
        assert (loaded.grid.d, loaded.grid.n, loaded.grid.box_length) == (2, 4, 2.0)
        assert np.array_equal(loaded.values, kernel.values)
        assert loaded.z.value == pytest.approx(kernel.z.value)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "other.txt"
        path.write_text("1 2 3\n")
        with pytest.raises(AssemblyError):
            load_kernel(path)


class TestOperatorService:
    def test_node_cap(self, line_grid):
        with pytest.raises(DomainError, match="cap is 64"):
            OperatorService(node_cap=64).build(line_grid, 1.0)

    def test_nonnegative_potential_is_asserted(self, line_grid):
        bump = PotentialSpec(kind="bounded_sample", amplitude=2.0, width=1.0)
        op = OperatorService().build(line_grid, 1.0, bump)
        assert np.array_equal(op.eigenvalues, build_operator(line_grid, 1.0, bump, assert_nonnegative=True).eigenvalues)

    def test_kernels_in_order(self, cauchy_operator):
        times = [ComplexTime.real(0.5), ComplexTime(modulus=1.0, theta=0.3)]
        kernels = OperatorService().kernels(cauchy_operator, times)
        for z, kernel in zip(times, kernels):
            assert np.array_equal(kernel.values, semigroup_kernel(cauchy_operator, z).values)

    def test_load_many(self, cauchy_operator, tmp_path):
        service = OperatorService()
        paths = [service.export(semigroup_kernel(cauchy_operator, ComplexTime.real(t)), tmp_path / f"k{t}.txt")
                 for t in (0.5, 1.0)]
        loaded = service.load_many(paths)
        assert [kernel.z.modulus for kernel in loaded] == pytest.approx([0.5, 1.0])

    def test_load_many_rejects_mixed_grids(self, cauchy_operator, tmp_path):
        service = OperatorService()
        other = build_operator(GridSpec(d=1, n=64, box_length=32.0), 1.0)
        paths = [service.export(semigroup_kernel(op, ComplexTime.real(1.0)), tmp_path / f"{name}.txt")
                 for name, op in (("fine", cauchy_operator), ("coarse", other))]
        with pytest.raises(AssemblyError):
            service.load_many(paths)

    def test_load_respects_cap(self, cauchy_operator, tmp_path):
        path = export_kernel(semigroup_kernel(cauchy_operator, ComplexTime.real(1.0)), tmp_path / "k.txt")
        with pytest.raises(AssemblyError, match="64"):
            OperatorService(node_cap=64).load(path)
