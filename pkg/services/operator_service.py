"""
Operator lab service
Discretizes H = (-Delta)^{alpha/2} + V on a periodic grid, evaluates e^{-zH} by spectral
decomposition and measures weighted tails of the resulting kernel matrices.
"""
import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import integrate, linalg
from scipy.sparse.linalg import svds

from schemas.requests import ComplexTime, GridSpec, PotentialSpec
from schemas.responses import DiscreteOperator, KernelMatrix, OperatorDiagnostics, frozen_array
from services.errors import AssemblyError, DomainError
from services.kernel_service import kernel_poisson

logger = logging.getLogger(__name__)

KERNEL_FORMAT = "# fraclab-kernel v1"
DENSE_SVD_LIMIT = 512


def grid_indices(grid: GridSpec) -> np.ndarray:
    """Integer coordinates (N, d); flat index = sum_axis m_axis n^axis."""
    flat = np.arange(grid.n_nodes)
    return np.stack([(flat // grid.n ** axis) % grid.n for axis in range(grid.d)], axis=1)


def grid_nodes(grid: GridSpec) -> np.ndarray:
    """Node coordinates in [-L/2, L/2)^d, the origin sits at grid.center_index."""
    return (grid_indices(grid) - grid.n // 2) * grid.spacing


def _wrapped_steps(delta: np.ndarray, n: int) -> np.ndarray:
    delta = np.mod(delta, n)
    return np.minimum(delta, n - delta)


def torus_distances(grid: GridSpec, index: int) -> np.ndarray:
    """Torus distance from node `index` to every node."""
    m = grid_indices(grid)
    steps = _wrapped_steps(m - m[index], grid.n)
    return grid.spacing * np.sqrt(np.sum(steps.astype(float) ** 2, axis=1))


@lru_cache(maxsize=4)
def torus_distance_matrix(grid: GridSpec) -> np.ndarray:
    """All pairwise torus distances, cached per grid and read-only."""
    m = grid_indices(grid)
    squared = np.zeros((grid.n_nodes, grid.n_nodes))
    for axis in range(grid.d):
        steps = _wrapped_steps(m[:, None, axis] - m[None, :, axis], grid.n).astype(float)
        squared += steps ** 2
    return frozen_array(grid.spacing * np.sqrt(squared))


def _kinetic_matrix(grid: GridSpec, alpha: float) -> np.ndarray:
    """Dense circulant with symbol |xi|^alpha on the discrete torus frequencies."""
    freqs = 2 * math.pi * np.fft.fftfreq(grid.n, d=grid.spacing)
    mesh = np.meshgrid(*([freqs] * grid.d), indexing="ij")
    symbol = sum(axis ** 2 for axis in mesh) ** (alpha / 2)
    column = np.fft.ifftn(symbol).real.ravel()
    m = grid_indices(grid)
    offset = np.zeros((grid.n_nodes, grid.n_nodes), dtype=np.int64)
    for axis in range(grid.d):
        offset += np.mod(m[:, None, axis] - m[None, :, axis], grid.n) * grid.n ** axis
    return column[offset]


def potential_values(grid: GridSpec, alpha: float, potential: PotentialSpec) -> np.ndarray:
    """V sampled at the grid nodes."""
    if potential.kind == "zero":
        return np.zeros(grid.n_nodes)
    radius = torus_distances(grid, grid.center_index)
    if potential.kind == "bounded_sample":
        if potential.values is not None:
            return np.asarray(potential.values, dtype=float)
        return potential.amplitude * np.exp(-radius ** 2 / (2 * potential.width ** 2))
    if not alpha < min(2, grid.d):
        raise DomainError(f"hardy potential needs alpha < min(2, d), got alpha={alpha}, d={grid.d}")
    cutoff = potential.cutoff if potential.cutoff is not None else grid.spacing
    return potential.a / np.maximum(radius, cutoff) ** alpha


def build_operator(grid: GridSpec, alpha: float, potential: PotentialSpec = PotentialSpec(),
                   assert_nonnegative: bool = False) -> DiscreteOperator:
    """Assemble, check and diagonalize the discrete operator."""
    if not alpha > 0 or alpha > 2:
        raise DomainError(f"alpha={alpha} outside (0, 2]")
    if alpha == 2 and potential.kind != "zero":
        raise DomainError("potentials are only supported for alpha < 2")
    if potential.values is not None and len(potential.values) != grid.n_nodes:
        raise DomainError(f"potential has {len(potential.values)} values for {grid.n_nodes} nodes")

    matrix = _kinetic_matrix(grid, alpha)
    matrix[np.diag_indices_from(matrix)] += potential_values(grid, alpha, potential)

    asymmetry = np.linalg.norm(matrix - matrix.T) / max(np.linalg.norm(matrix), 1e-300)
    if asymmetry > 1e-10:
        raise AssemblyError(f"assembled matrix is not symmetric (relative defect {asymmetry:.2e})")
    matrix = (matrix + matrix.T) / 2

    eigenvalues, eigenvectors = linalg.eigh(matrix)
    defect = np.max(np.abs(eigenvectors.T @ eigenvectors - np.eye(grid.n_nodes)))
    if defect > 1e-8:
        raise AssemblyError(f"eigenvectors are not orthonormal (defect {defect:.2e})")
    if assert_nonnegative and eigenvalues[0] < -1e-8 * abs(eigenvalues[-1]):
        raise AssemblyError(f"form is not nonnegative: lambda_min={eigenvalues[0]:.6g}")

    cutoff = None
    if potential.kind == "hardy":
        cutoff = potential.cutoff if potential.cutoff is not None else grid.spacing
    logger.info(f"🧮 assembled operator alpha={alpha} d={grid.d} n={grid.n} V={potential.kind}: "
                f"lambda in [{eigenvalues[0]:.4g}, {eigenvalues[-1]:.4g}]")
    return DiscreteOperator(
        grid=grid,
        alpha=alpha,
        potential=potential,
        eigenvalues=frozen_array(eigenvalues),
        eigenvectors=frozen_array(eigenvectors),
        weight=grid.weight,
        cutoff=cutoff,
    )


def _spectral_factor(op: DiscreteOperator, z: ComplexTime) -> np.ndarray:
    return np.exp(-z.value * op.eigenvalues)


def semigroup_kernel(op: DiscreteOperator, z: ComplexTime) -> KernelMatrix:
    """K = Phi diag(e^{-z lambda}) Phi^T / h^d."""
    factor = _spectral_factor(op, z)
    phi = op.eigenvectors
    values = (phi * factor.real) @ phi.T / op.weight
    if not z.is_real:
        values = values + 1j * ((phi * factor.imag) @ phi.T / op.weight)
    else:
        values = values.astype(complex)
    logger.debug(f"semigroup kernel at z={z.value} on {op.grid.n_nodes} nodes")
    return KernelMatrix(values=frozen_array(values), z=z, grid=op.grid, weight=op.weight)


def semigroup_column(op: DiscreteOperator, z: ComplexTime, index: int) -> np.ndarray:
    """Column K[:, index] without forming the full matrix."""
    factor = _spectral_factor(op, z)
    return op.eigenvectors @ (factor * op.eigenvectors[index]) / op.weight


def semigroup_diagonal(op: DiscreteOperator, z: ComplexTime) -> np.ndarray:
    return (op.eigenvectors ** 2) @ _spectral_factor(op, z) / op.weight


def compose(first: KernelMatrix, second: KernelMatrix) -> KernelMatrix:
    """Kernel of the composition, the weighted matrix product."""
    if first.grid != second.grid:
        raise DomainError("kernels live on different grids")
    values = first.values @ second.values * first.weight
    return KernelMatrix(values=frozen_array(values), z=first.z + second.z, grid=first.grid, weight=first.weight)


def contraction_norm(kernel: KernelMatrix) -> float:
    """Weighted l2 -> l2 operator norm."""
    matrix = kernel.values * kernel.weight
    if kernel.size <= DENSE_SVD_LIMIT:
        return float(linalg.svdvals(matrix)[0])
    start = np.ones(kernel.size, dtype=matrix.dtype)
    return float(svds(matrix, k=1, v0=start, return_singular_vectors=False)[0])


def unitary_check(op: DiscreteOperator, s: float, seed: int = 0) -> float:
    """| ||e^{-isH} f|| - 1 | for a random f of unit weighted norm."""
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(op.grid.n_nodes) + 1j * rng.standard_normal(op.grid.n_nodes)
    f /= math.sqrt(op.weight * np.vdot(f, f).real)
    phi = op.eigenvectors
    evolved = phi @ (np.exp(-1j * s * op.eigenvalues) * (phi.T @ f))
    return abs(math.sqrt(op.weight * np.vdot(evolved, evolved).real) - 1.0)


def weighted_l2_tail(kernel: KernelMatrix, r: float) -> float:
    """max_y sum_{x : dist(x, y) >= r} |K[x, y]|^2 h^d."""
    if r < 0 or r >= kernel.grid.box_length / 2:
        raise DomainError(f"r={r} must lie in [0, L/2) = [0, {kernel.grid.box_length / 2})")
    outside = torus_distance_matrix(kernel.grid) >= r
    column_tails = np.sum(np.abs(kernel.values) ** 2 * outside, axis=0) * kernel.weight
    return float(np.max(column_tails))


def column_l2_tail(column: np.ndarray, grid: GridSpec, index: int, r: float) -> float:
    """The same functional for one column y = index."""
    if r < 0 or r >= grid.box_length / 2:
        raise DomainError(f"r={r} must lie in [0, L/2) = [0, {grid.box_length / 2})")
    outside = torus_distances(grid, index) >= r
    return float(np.sum(np.abs(column[outside]) ** 2) * grid.weight)


def kernel_matrix_from_function(grid: GridSpec, z: ComplexTime,
                                radial: Callable[[np.ndarray], np.ndarray]) -> KernelMatrix:
    """K[i, j] = radial(dist_torus(x_i, x_j))."""
    values = np.asarray(radial(torus_distance_matrix(grid)), dtype=complex)
    return KernelMatrix(values=frozen_array(values), z=z, grid=grid, weight=grid.weight)


def periodized_poisson_1d(z: Union[ComplexTime, complex, float], x: Union[float, np.ndarray],
                          box_length: float) -> Union[complex, np.ndarray]:
    """Image sum of the alpha = 1, d = 1 kernel over the circle of length L."""
    value = z.value if isinstance(z, ComplexTime) else complex(z)
    phase = 2 * math.pi / box_length
    result = np.sinh(phase * value) / (box_length * (np.cosh(phase * value) - np.cos(phase * np.asarray(x))))
    return complex(result) if np.ndim(result) == 0 else result


def poisson_l2_tail(z: ComplexTime, r: float, box_length: Optional[float] = None) -> float:
    """
    int_{|x| >= r} |K(z, x)|^2 dx for the alpha = 1, d = 1 kernel: over the real line by default,
    over the circle of length box_length with the periodized kernel when given.
    """
    if box_length is None:
        def density(x: float) -> float:
            return abs(kernel_poisson(1, z, x)) ** 2
        upper = np.inf
    else:
        if not r < box_length / 2:
            raise DomainError(f"r={r} must be below L/2={box_length / 2}")

        def density(x: float) -> float:
            return abs(periodized_poisson_1d(z, x, box_length)) ** 2
        upper = box_length / 2

    value, _ = integrate.quad(density, r, upper, epsabs=1e-14, epsrel=1e-11, limit=400)
    return 2 * value


def hardy_cutoff_sensitivity(grid: GridSpec, alpha: float, a: float, t: float) -> List[OperatorDiagnostics]:
    """lambda_min and the origin diagonal of e^{-tH} for cutoffs h/2, h and 2h."""
    diagnostics = []
    for factor in (0.5, 1.0, 2.0):
        cutoff = factor * grid.spacing
        op = build_operator(grid, alpha, PotentialSpec(kind="hardy", a=a, cutoff=cutoff))
        diagonal = semigroup_diagonal(op, ComplexTime.real(t))
        diagnostics.append(OperatorDiagnostics(
            cutoff=cutoff,
            lambda_min=op.lambda_min,
            origin_diagonal=float(diagonal[grid.center_index].real),
        ))
    spread = max(d.origin_diagonal for d in diagnostics) / min(d.origin_diagonal for d in diagnostics)
    logger.info(f"📐 hardy cutoff sensitivity a={a}: origin diagonal spread {spread:.4g}")
    return diagnostics


def hardy_origin_exponent(op: DiscreteOperator, t: float) -> float:
    """Empirical delta in e^{-tH}(x, x) / e^{-tH_0}(x, x) ~ (|x| / t^{1/alpha})^{-2 delta} near the origin."""
    if op.potential.kind != "hardy":
        raise DomainError("origin exponent is defined for the hardy potential only")
    free = build_operator(op.grid, op.alpha)
    time = ComplexTime.real(t)
    ratio = semigroup_diagonal(op, time).real / semigroup_diagonal(free, time).real
    radius = torus_distances(op.grid, op.grid.center_index)
    scale = t ** (1 / op.alpha)
    nodes = (radius >= op.grid.spacing) & (radius <= scale / 2)
    if np.count_nonzero(nodes) < 2:
        raise DomainError(f"t^(1/alpha)={scale:.4g} leaves fewer than two nodes near the origin")
    slope, _ = np.polyfit(np.log(radius[nodes] / scale), np.log(ratio[nodes]), 1)
    delta = -slope / 2
    logger.info(f"📐 empirical hardy origin exponent delta={delta:.4g} (a={op.potential.a}, t={t})")
    return float(delta)


def export_kernel(kernel: KernelMatrix, path: Union[str, Path]) -> Path:
    """Write the kernel as text: format header, metadata line, then one row per node."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = kernel.grid
    meta = (f"# d={grid.d} n={grid.n} box_length={grid.box_length!r} re_z={kernel.z.value.real!r} "
            f"im_z={kernel.z.value.imag!r} weight={kernel.weight!r}")
    interleaved = np.empty((kernel.size, 2 * kernel.size))
    interleaved[:, 0::2] = kernel.values.real
    interleaved[:, 1::2] = kernel.values.imag
    with path.open("w") as handle:
        handle.write(KERNEL_FORMAT + "\n")
        handle.write(meta + "\n")
        np.savetxt(handle, interleaved, fmt="%.17g")
    logger.info(f"💾 exported {kernel.size}x{kernel.size} kernel to {path}")
    return path


def load_kernel(path: Union[str, Path], node_cap: Optional[int] = None) -> KernelMatrix:
    """Inverse of export_kernel."""
    path = Path(path)
    if not path.is_file():
        raise AssemblyError(f"kernel file {path} not found")
    with path.open() as handle:
        header = handle.readline().strip()
        meta_line = handle.readline().strip()
        if header != KERNEL_FORMAT or not meta_line.startswith("#"):
            raise AssemblyError(f"{path} is not a fraclab kernel file")
        try:
            meta = dict(item.split("=", 1) for item in meta_line[1:].split())
            grid = GridSpec(d=int(meta["d"]), n=int(meta["n"]), box_length=float(meta["box_length"]),
                            node_cap=node_cap or int(meta["n"]) ** int(meta["d"]))
            z = ComplexTime.from_complex(complex(float(meta["re_z"]), float(meta["im_z"])))
            weight = float(meta["weight"])
        except (KeyError, ValueError) as exc:
            raise AssemblyError(f"{path}: bad metadata line: {exc}") from exc
        data = np.loadtxt(handle, ndmin=2)
    if data.shape != (grid.n_nodes, 2 * grid.n_nodes):
        raise AssemblyError(f"{path}: expected {grid.n_nodes} rows of {2 * grid.n_nodes} numbers, got {data.shape}")
    values = data[:, 0::2] + 1j * data[:, 1::2]
    return KernelMatrix(values=frozen_array(values), z=z, grid=grid, weight=weight)


class OperatorService:
    """Discrete operators, their kernels and kernel files under one node cap"""

    def __init__(self, node_cap: Optional[int] = None):
        self.node_cap = node_cap

    def build(self, grid: GridSpec, alpha: float, potential: PotentialSpec = PotentialSpec()) -> DiscreteOperator:
        """Assemble H, asserting H >= 0 whenever the potential is nonnegative."""
        if self.node_cap is not None and grid.n_nodes > self.node_cap:
            raise DomainError(f"grid has {grid.n_nodes} nodes, cap is {self.node_cap}")
        return build_operator(grid, alpha, potential, assert_nonnegative=potential.is_nonnegative)

    def kernels(self, op: DiscreteOperator, times: Sequence[ComplexTime]) -> List[KernelMatrix]:
        return [semigroup_kernel(op, z) for z in times]

    def export(self, kernel: KernelMatrix, path: Union[str, Path]) -> Path:
        return export_kernel(kernel, path)

    def load(self, path: Union[str, Path]) -> KernelMatrix:
        return load_kernel(path, node_cap=self.node_cap)

    def load_many(self, paths: Sequence[Union[str, Path]]) -> List[KernelMatrix]:
        kernels = [self.load(path) for path in paths]
        if any(kernel.grid != kernels[0].grid for kernel in kernels[1:]):
            raise AssemblyError("kernel files live on different grids")
        return kernels
