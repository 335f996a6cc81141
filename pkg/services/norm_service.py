"""
Operator norm service
Weighted p -> q norms of kernel matrices: exact where a closed formula exists, otherwise a
certified interval from Riesz-Thorin interpolation and a power-iteration lower bound.
"""
import itertools
import logging
import math
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from schemas.requests import conjugate_exponent, inverse
from schemas.responses import KernelMatrix, NormEstimate
from services.errors import DomainError

logger = logging.getLogger(__name__)

# (1/p, 1/q) of the exactly computable corners
CORNERS = {
    (1.0, 1.0): (1.0, 1.0),
    (1.0, 2.0): (1.0, 0.5),
    (1.0, math.inf): (1.0, 0.0),
    (2.0, 2.0): (0.5, 0.5),
    (2.0, math.inf): (0.5, 0.0),
    (math.inf, math.inf): (0.0, 0.0),
}
POWER_ITERATIONS = 60
RANDOM_STARTS = 2


def _check_exponents(p: float, q: float) -> None:
    if not (p >= 1 and q >= 1):
        raise DomainError(f"exponents must be >= 1, got p={p}, q={q}")


def _lp(values: np.ndarray, p: float, axis: Optional[int] = None) -> np.ndarray:
    magnitude = np.abs(values)
    if math.isinf(p):
        return magnitude.max(axis=axis)
    if p == 1:
        return magnitude.sum(axis=axis)
    if p == 2:
        return np.sqrt((magnitude ** 2).sum(axis=axis))
    return ((magnitude ** p).sum(axis=axis)) ** (1 / p)


def lp_norm(values: np.ndarray, p: float, weight: float = 1.0) -> float:
    """(sum |f|^p w)^{1/p}, the sup for p = inf."""
    if math.isinf(p):
        return float(np.max(np.abs(values)))
    return float(_lp(values, p)) * weight ** (1 / p)


def is_exact(p: float, q: float) -> bool:
    return p == 1 or math.isinf(q) or (p == 2 and q == 2)


def plain_exact_norm(matrix: np.ndarray, p: float, q: float) -> float:
    """Unweighted norm for p = 1, q = inf or p = q = 2."""
    if matrix.size == 0:
        return 0.0
    if p == 1:
        return float(_lp(matrix, q, axis=0).max())
    if math.isinf(q):
        return float(_lp(matrix, conjugate_exponent(p), axis=1).max())
    if p == 2 and q == 2:
        return float(linalg.svdvals(matrix)[0])
    raise DomainError(f"no closed formula for the {p}->{q} norm")


def weight_factor(weight: float, p: float, q: float) -> float:
    """||wK||_{l^p(w) -> l^q(w)} = w^{1 + 1/q - 1/p} ||K||_{p -> q}."""
    return weight ** (1 + inverse(q) - inverse(p))


def corner_norms(matrix: np.ndarray) -> Dict[Tuple[float, float], float]:
    return {point: plain_exact_norm(matrix, p, q) for (p, q), point in CORNERS.items()}


def _barycentric(target: Tuple[float, float], a, b, c) -> Optional[Tuple[float, float, float]]:
    (x, y), (x1, y1), (x2, y2), (x3, y3) = target, a, b, c
    det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    if abs(det) < 1e-14:
        return None
    l1 = ((y2 - y3) * (x - x3) + (x3 - x2) * (y - y3)) / det
    l2 = ((y3 - y1) * (x - x3) + (x1 - x3) * (y - y3)) / det
    l3 = 1 - l1 - l2
    if min(l1, l2, l3) < -1e-12:
        return None
    return max(l1, 0.0), max(l2, 0.0), max(l3, 0.0)


def interpolated_upper(corners: Dict[Tuple[float, float], float], p: float, q: float) -> float:
    """Smallest Riesz-Thorin bound prod M_k^{lambda_k} over corner triangles containing (1/p, 1/q)."""
    target = (inverse(p), inverse(q))
    best = math.inf
    for triple in itertools.combinations(corners, 3):
        weights = _barycentric(target, *triple)
        if weights is None:
            continue
        bound = 1.0
        for point, share in zip(triple, weights):
            if share > 0:
                bound *= corners[point] ** share
        best = min(best, bound)
    return best


def _dual_vector(values: np.ndarray, r: float) -> np.ndarray:
    """Unit vector of l^{r'} norming `values` in l^r."""
    magnitude = np.abs(values)
    size = _lp(values, r)
    if size == 0:
        return np.zeros_like(values)
    phase = np.divide(values, magnitude, out=np.zeros_like(values), where=magnitude > 0)
    return phase * (magnitude / size) ** (r - 1)


def power_lower(matrix: np.ndarray, p: float, q: float, seed: int = 0,
                iterations: int = POWER_ITERATIONS) -> float:
    """Largest ||Kx||_q / ||x||_p met along Boyd's nonlinear power iteration, 1 < p <= q < inf."""
    if matrix.size == 0:
        return 0.0
    p_dual = conjugate_exponent(p)
    rng = np.random.default_rng(seed)
    starts = [np.ones(matrix.shape[1], dtype=complex)]
    starts.append(matrix[int(np.argmax(_lp(matrix, 2, axis=1)))].conj().astype(complex))
    for _ in range(RANDOM_STARTS):
        starts.append(rng.standard_normal(matrix.shape[1]) + 0j)

    best = 0.0
    adjoint = matrix.conj().T
    for start in starts:
        x = start
        for _ in range(iterations):
            size = _lp(x, p)
            if size == 0:
                break
            x = x / size
            image = matrix @ x
            best = max(best, float(_lp(image, q)))
            pulled = adjoint @ _dual_vector(image, q)
            if not np.any(pulled):
                break
            x = _dual_vector(pulled, p_dual)
    return best


def opnorm(matrix: np.ndarray, p: float, q: float, weight: float = 1.0, norm_gap: float = 3.0,
           seed: int = 0) -> NormEstimate:
    """Weighted p -> q norm of f -> w K f between l^p(w) and l^q(w)."""
    _check_exponents(p, q)
    matrix = np.asarray(matrix)
    scale = weight_factor(weight, p, q)
    if matrix.size == 0 or not np.any(matrix):
        return NormEstimate(lower=0.0, upper=0.0, exact=True)
    if is_exact(p, q):
        value = scale * plain_exact_norm(matrix, p, q)
        return NormEstimate(lower=value, upper=value, exact=True)

    upper = scale * interpolated_upper(corner_norms(matrix), p, q)
    lower = min(scale * power_lower(matrix, p, q, seed=seed), upper)
    uncertain = lower == 0 or upper / lower > norm_gap
    if uncertain:
        logger.warning(f"⚠️ uncertain {p}->{q} norm: [{lower:.4g}, {upper:.4g}]")
    return NormEstimate(lower=lower, upper=upper, exact=False, uncertain=uncertain)


def masked_opnorm(kernel: KernelMatrix, rows: np.ndarray, columns: np.ndarray, p: float, q: float,
                  norm_gap: float = 3.0, seed: int = 0) -> NormEstimate:
    """||1_rows T 1_columns||_{p -> q} for boolean masks over the grid nodes."""
    block = kernel.values[np.ix_(np.flatnonzero(rows), np.flatnonzero(columns))]
    return opnorm(block, p, q, kernel.weight, norm_gap, seed)


def kernel_opnorm(kernel: KernelMatrix, p: float, q: float, norm_gap: float = 3.0, seed: int = 0) -> NormEstimate:
    return opnorm(kernel.values, p, q, kernel.weight, norm_gap, seed)


class NormService:
    """Kernel operator norms with one gap tolerance and one seed for the random starts"""

    def __init__(self, norm_gap: float = 3.0, seed: int = 0):
        if not norm_gap >= 1:
            raise DomainError(f"norm_gap must be at least 1, got {norm_gap}")
        self.norm_gap = norm_gap
        self.seed = seed

    def kernel_norm(self, kernel: KernelMatrix, p: float, q: float) -> NormEstimate:
        return kernel_opnorm(kernel, p, q, self.norm_gap, self.seed)

    def masked_norm(self, kernel: KernelMatrix, rows: np.ndarray, columns: np.ndarray, p: float,
                    q: float) -> NormEstimate:
        return masked_opnorm(kernel, rows, columns, p, q, self.norm_gap, self.seed)

    def summary(self, kernel: KernelMatrix, p: float, q: float) -> Dict[str, Any]:
        """The p -> q interval as a JSON-ready record."""
        estimate = self.kernel_norm(kernel, p, q)
        return {'lower': estimate.lower, 'upper': estimate.upper, 'exact': estimate.exact,
                'uncertain': estimate.uncertain}
