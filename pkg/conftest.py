"""
Shared fixtures: small grids, operators and kernel matrices reused across test modules
"""
import numpy as np
import pytest

from schemas.requests import ComplexTime, GridSpec, PotentialSpec
from services.kernel_service import kernel_poisson
from services.operator_service import build_operator, kernel_matrix_from_function


@pytest.fixture(scope="session")
def line_grid():
    return GridSpec(d=1, n=128, box_length=32.0)


@pytest.fixture(scope="session")
def fine_line_grid():
    return GridSpec(d=1, n=512, box_length=32.0)


@pytest.fixture(scope="session")
def plane_grid():
    return GridSpec(d=2, n=16, box_length=8.0)


@pytest.fixture(scope="session")
def cauchy_operator(line_grid):
    return build_operator(line_grid, 1.0)


@pytest.fixture(scope="session")
def fine_cauchy_operator(fine_line_grid):
    return build_operator(fine_line_grid, 1.0)


@pytest.fixture(scope="session")
def bump_operator(line_grid):
    bump = PotentialSpec(kind="bounded_sample", amplitude=2.0, width=1.0)
    return build_operator(line_grid, 1.0, bump, assert_nonnegative=True)


@pytest.fixture(scope="session")
def hardy_plane_operator(plane_grid):
    return build_operator(plane_grid, 1.0, PotentialSpec(kind="hardy", a=1.0), assert_nonnegative=True)


@pytest.fixture(scope="session")
def poisson_samples(fine_line_grid):
    """Exact alpha = 1 kernel at t = 0.5 sampled on torus distances."""
    time = ComplexTime.real(0.5)
    return kernel_matrix_from_function(fine_line_grid, time, lambda r: kernel_poisson(1, time, r))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "results"
    path.mkdir()
    return path


@pytest.fixture(scope="session")
def wide_line_grid():
    return GridSpec(d=1, n=1024, box_length=64.0)


@pytest.fixture(scope="session")
def wide_poisson_samples(wide_line_grid):
    """Exact alpha = 1 kernel at t = h, where r = h resolves nine dyadic annuli."""
    time = ComplexTime.real(wide_line_grid.spacing)
    return kernel_matrix_from_function(wide_line_grid, time, lambda r: kernel_poisson(1, time, r))
