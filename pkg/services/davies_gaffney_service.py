"""
Davies-Gaffney service
Dyadic annuli on the torus, ball averages, and the fitting and cross-checking of dyadic
Davies-Gaffney profiles ||1_{B_x(r)} T 1_{A(x,r,k)}||_{p->q} of kernel matrices.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from schemas.requests import DGParams, DyadicAnnulus, GridSpec, conjugate_exponent, inverse
from schemas.responses import (
    AnnulusNorm,
    DGReport,
    DualReport,
    HypercontractiveReport,
    KernelMatrix,
    LpBoundedReport,
    NormEstimate,
    PointwiseEquivalenceReport,
    RadiusCheck,
    TwoRadiusReport,
)
from services.errors import DegenerateProfileError, DomainError
from services.norm_service import NormService, is_exact, kernel_opnorm, lp_norm, masked_opnorm
from services.operator_service import compose, torus_distance_matrix, torus_distances

logger = logging.getLogger(__name__)

SLOPE_TOL = 0.1
TWO_RADIUS_SPREAD = 16.0
TWO_RADIUS_RATIOS = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
EDGE_RTOL = 1e-12
MATCH_RTOL = 1e-9
CONSTANT_SLACK = 16.0

# (k, measured norm, nodes in the annulus)
ProfilePoint = Tuple[int, NormEstimate, int]
RadiusKernels = Sequence[Tuple[float, KernelMatrix]]


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def annulus_index(dist, r) -> np.ndarray:
    """k with dist in (2^{k-1} r, 2^k r]; 0 on the closed ball of radius r."""
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError(f"annulus radius must be positive, got {r}")
    ratio = np.maximum(np.asarray(dist, dtype=float) / r, 1.0)
    k = np.ceil(np.log2(ratio) - EDGE_RTOL)
    return np.maximum(k, 0).astype(int)


def annulus_mask(annulus: DyadicAnnulus, grid: GridSpec) -> np.ndarray:
    distances = torus_distances(grid, annulus.center)
    return annulus_index(distances, annulus.base_radius) == annulus.index


def ball_mask(grid: GridSpec, center: int, radius: float) -> np.ndarray:
    return annulus_index(torus_distances(grid, center), radius) == 0


def cover_index(grid: GridSpec, r: float) -> int:
    """Smallest k whose annulus reaches the torus diameter."""
    diameter = math.sqrt(grid.d) * grid.box_length / 2
    return int(annulus_index(diameter, r))


def _reaches_wrap(grid: GridSpec, r: float, k: int) -> bool:
    return 2.0 ** k * r > grid.box_length / 2 * (1 + EDGE_RTOL)


def profile_weight(beta: float, k: int) -> float:
    """g(2^k) = (1 + 2^k)^{-beta}."""
    return (1.0 + 2.0 ** k) ** (-beta)


def profile_normalizer(r: float, d: int, smoothing: float, d_over_sigma: float, beta: float, k: int) -> float:
    """r^{-d(1/p - 1/q)} g(2^k) 2^{k d/sigma}."""
    return r ** (-d * smoothing) * profile_weight(beta, k) * 2.0 ** (k * d_over_sigma)


# ---------------------------------------------------------------------------
# Ball averages
# ---------------------------------------------------------------------------

def _ball_footprint(grid: GridSpec, r: float) -> np.ndarray:
    reach = int(math.floor(r / grid.spacing * (1 + EDGE_RTOL)))
    if 2 * reach + 1 > grid.n:
        raise DomainError(f"r={r} must stay below L/2={grid.box_length / 2}")
    offsets = np.arange(-reach, reach + 1)
    mesh = np.meshgrid(*([offsets] * grid.d), indexing="ij")
    length = grid.spacing * np.sqrt(sum(axis.astype(float) ** 2 for axis in mesh))
    return length <= r * (1 + EDGE_RTOL)


def ball_average(f: np.ndarray, grid: GridSpec, p: float, r: float, q: Optional[float] = None) -> np.ndarray:
    """(N_{p,q,r} f)(x) = r^{-d/q} ||1_{B_x(r)} f||_p on the torus; q defaults to p."""
    if r < grid.spacing * (1 - EDGE_RTOL):
        raise DomainError(f"ball radius r={r} is below the grid spacing {grid.spacing}")
    q = p if q is None else q
    footprint = _ball_footprint(grid, r)
    shape = (grid.n,) * grid.d
    # flat index = sum m_axis n^axis, so axis 0 varies fastest
    field = np.reshape(np.abs(np.asarray(f)), shape, order="F")
    if math.isinf(p):
        local = ndimage.maximum_filter(field, footprint=footprint, mode="wrap")
    else:
        sums = ndimage.correlate(field ** p, footprint.astype(float), mode="wrap")
        local = (np.maximum(sums, 0.0) * grid.weight) ** (1 / p)
    return np.ravel(local, order="F") * r ** (-grid.d * inverse(q))


def average_norm_ratios(grid: GridSpec, p: float, radii: Sequence[float], samples: int = 100, seed: int = 0,
                        q: Optional[float] = None) -> Dict[float, Tuple[float, float]]:
    """min and max of ||N_{p,q,r} f||_q / ||f||_p over random f, per radius."""
    q = p if q is None else q
    rng = np.random.default_rng(seed)
    functions = rng.standard_normal((samples, grid.n_nodes)) * rng.exponential(1.0, (samples, grid.n_nodes))
    brackets = {}
    for r in radii:
        ratios = [lp_norm(ball_average(f, grid, p, r, q), q, grid.weight) / lp_norm(f, p, grid.weight)
                  for f in functions]
        brackets[r] = (min(ratios), max(ratios))
        logger.debug(f"N_({p},{q},{r}) ratios in [{brackets[r][0]:.4g}, {brackets[r][1]:.4g}]")
    return brackets


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

def annulus_profile(kernel: KernelMatrix, center: int, r: float, p: float, q: float, kmax: int,
                    norm_gap: float = 3.0, seed: int = 0, jobs: int = 1) -> List[ProfilePoint]:
    """Masked norms ||1_{B_x(r)} T 1_{A(x,r,k)}||_{p->q} for k = 0..kmax."""
    if not 0 <= center < kernel.size:
        raise DomainError(f"center {center} is not a grid node")
    index = annulus_index(torus_distances(kernel.grid, center), r)
    rows = index == 0

    def measure(k: int) -> ProfilePoint:
        columns = index == k
        return k, masked_opnorm(kernel, rows, columns, p, q, norm_gap, seed), int(np.count_nonzero(columns))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(measure, range(kmax + 1)))
    return [measure(k) for k in range(kmax + 1)]


def fit_profile(points: Sequence[ProfilePoint], r: float, d: int, smoothing: float, d_over_sigma: float,
                beta: float, box_length: float, slope_from_k: int = 2, slope_tol: float = SLOPE_TOL) -> DGReport:
    """C_DG as the largest normalized annulus norm, slope by log2 regression over the untouched tail."""
    expected = -(beta - d_over_sigma)
    eligible = [k for k, _, nodes in points
                if k >= max(slope_from_k, 2) and nodes > 0 and 2.0 ** k * r <= box_length / 2 * (1 + EDGE_RTOL)]
    if len(eligible) < 2:
        raise DegenerateProfileError(
            f"fewer than two usable annuli beyond k=1 (r={r}, L={box_length}, from k={slope_from_k})")
    positive = [k for k, norm, _ in points if k in eligible and norm.upper > 0]
    regression = positive if len(positive) >= 2 else []

    per_k = []
    for k, norm, nodes in points:
        normalizer = profile_normalizer(r, d, smoothing, d_over_sigma, beta, k)
        per_k.append(AnnulusNorm(k=k, norm=norm, normalizer=normalizer, ratio=norm.upper / normalizer,
                                 nodes=nodes, in_regression=k in regression))
    constant = max((item.ratio for item in per_k if item.nodes > 0), default=0.0)

    if regression:
        uppers = [item.norm.upper for item in per_k if item.k in regression]
        slope = float(np.polyfit(regression, np.log2(uppers), 1)[0])
    else:
        slope = -math.inf
    passed = math.isfinite(constant) and slope <= expected + slope_tol
    return DGReport(
        per_k_norms=per_k,
        fitted_CDG=constant,
        fitted_slope=slope,
        expected_slope=expected,
        slope_tol=slope_tol,
        uncertain_norms=sum(1 for item in per_k if item.norm.uncertain),
        passed=passed,
    )


def dg_profile(kernel: KernelMatrix, center: int, r: float, params: DGParams, kmax: int,
               slope_from_k: int = 2, slope_tol: float = SLOPE_TOL, norm_gap: float = 3.0,
               seed: int = 0, jobs: int = 1) -> DGReport:
    """Measure and fit the dyadic (p, q, sigma) profile of a kernel around one center."""
    if params.d != kernel.grid.d:
        raise DomainError(f"parameters are for d={params.d}, kernel lives in d={kernel.grid.d}")
    points = annulus_profile(kernel, center, r, params.p, params.q, kmax, norm_gap, seed, jobs)
    report = fit_profile(points, r, params.d, params.smoothing, params.d_over_sigma, params.beta,
                         kernel.grid.box_length, slope_from_k, slope_tol)
    icon = "✅" if report.passed else "⚠️"
    logger.info(f"{icon} DG profile {params.p}->{params.q} at r={r}: C_DG={report.fitted_CDG:.6g}, "
                f"slope {report.fitted_slope:.4g} (expected <= {report.expected_slope:.4g})")
    return report


# ---------------------------------------------------------------------------
# Pointwise equivalence
# ---------------------------------------------------------------------------

def _slack(derived: float, measured: float) -> float:
    if measured > 0:
        return derived / measured
    return 1.0 if derived == 0 else math.inf


def pointwise_equivalence_check(kernel: KernelMatrix, r: float, beta: float, sigma: float,
                                center: Optional[int] = None, kmax: Optional[int] = None) -> PointwiseEquivalenceReport:
    """
    Cross-check the 1->inf annulus profile at `center` against the pointwise envelope
    |K(x, y)| <= C r^{-d} (1 + |x - y|/r)^{-(beta - d/sigma)} over every pair of nodes.
    """
    grid = kernel.grid
    d_over_sigma = grid.d * inverse(sigma)
    decay = beta - d_over_sigma
    if not decay > 0:
        raise DomainError(f"beta={beta} must exceed d/sigma={d_over_sigma}")
    center = grid.center_index if center is None else center
    kmax = cover_index(grid, r) if kmax is None else kmax

    points = annulus_profile(kernel, center, r, 1.0, math.inf, kmax)
    c_dg = max((norm.upper / profile_normalizer(r, grid.d, 1.0, d_over_sigma, beta, k)
                for k, norm, nodes in points if nodes > 0), default=0.0)

    envelope = r ** (-grid.d) * (1 + torus_distance_matrix(grid) / r) ** (-decay)
    scaled = np.abs(kernel.values) / envelope
    c_pointwise = float(scaled.max())

    # annulus bound -> pointwise bound, then pointwise bound -> annulus bound
    ks = range(kmax + 1)
    factor_a = max(2.0 ** (-d_over_sigma) if k == 0 else (2.0 ** k / (1 + 2.0 ** k)) ** d_over_sigma for k in ks)
    factor_b = max(
        2.0 ** beta if k == 0 else 2.0 ** (-(k - 1) * decay) * (1 + 2.0 ** k) ** beta * 2.0 ** (-k * d_over_sigma)
        for k in ks
    )
    derived_pointwise = factor_a * c_dg
    derived_annulus = factor_b * c_pointwise

    direction_a = c_pointwise <= derived_pointwise * (1 + MATCH_RTOL)
    direction_b = c_dg <= derived_annulus * (1 + MATCH_RTOL)
    violation = None
    if not direction_a:
        x, y = np.unravel_index(int(np.argmax(scaled)), scaled.shape)
        violation = (int(x), int(y))
        logger.warning(f"⚠️ pointwise envelope broken at (x, y)=({x}, {y}): "
                       f"{c_pointwise:.6g} > {derived_pointwise:.6g}")
    logger.info(f"📐 pointwise equivalence r={r}: C_DG={c_dg:.6g}, C_pointwise={c_pointwise:.6g}")
    return PointwiseEquivalenceReport(
        c_dg=c_dg,
        c_pointwise=c_pointwise,
        derived_pointwise=derived_pointwise,
        derived_annulus=derived_annulus,
        constant_a=_slack(derived_pointwise, c_pointwise),
        constant_b=_slack(derived_annulus, c_dg),
        direction_a=direction_a,
        direction_b=direction_b,
        violation=violation,
    )


# ---------------------------------------------------------------------------
# Estimate checks
# ---------------------------------------------------------------------------

def _spread(values: Sequence[float]) -> float:
    values = list(values)
    if not values or max(values) == 0:
        return 1.0
    if min(values) == 0:
        return math.inf
    return max(values) / min(values)


def _key(value: float) -> str:
    return f"{value:g}"


def intervals_match(first: NormEstimate, second: NormEstimate) -> bool:
    if first.exact and second.exact:
        return math.isclose(first.upper, second.upper, rel_tol=MATCH_RTOL, abs_tol=1e-300)
    return (first.lower <= second.upper * (1 + MATCH_RTOL)) and (second.lower <= first.upper * (1 + MATCH_RTOL))


def check_hypercontractive(kernels: RadiusKernels, params: DGParams, c_dg: float = 1.0,
                           constant_spread: float = 2.0, norm_gap: float = 3.0,
                           seed: int = 0) -> HypercontractiveReport:
    """||T_r||_{p->q} against c_dg r^{-d(1/p - 1/q)} across radii, plus the transpose and T*T identities."""
    if not c_dg > 0:
        raise DomainError(f"c_dg must be positive, got {c_dg}")
    per_radius = []
    duality = []
    consistent = True
    for r, kernel in kernels:
        measured = kernel_opnorm(kernel, params.p, params.q, norm_gap, seed)
        reference = c_dg * r ** (-params.d * params.smoothing)
        per_radius.append(RadiusCheck(r=r, measured=measured, reference=reference, ratio=measured.upper / reference))

        forward = kernel_opnorm(kernel, 1.0, 2.0)
        backward = kernel_opnorm(kernel.transpose(), 2.0, math.inf)
        to_two = kernel_opnorm(kernel, params.p, 2.0, norm_gap, seed)
        gram = kernel_opnorm(compose(kernel.conjugate().transpose(), kernel), params.p,
                             conjugate_exponent(params.p), norm_gap, seed)
        squared = NormEstimate(lower=to_two.lower ** 2, upper=to_two.upper ** 2, exact=to_two.exact)
        matched = intervals_match(forward, backward) and intervals_match(squared, gram)
        consistent = consistent and matched
        duality.append({
            "r": r,
            "one_to_two": forward.upper,
            "two_to_inf_transpose": backward.upper,
            "p_to_two_squared": squared.upper,
            "gram_p_to_p_dual": gram.upper,
        })

    spread = _spread(item.ratio for item in per_radius)
    passed = consistent and spread <= constant_spread and all(math.isfinite(item.ratio) for item in per_radius)
    icon = "✅" if passed else "⚠️"
    logger.info(f"{icon} hypercontractive {params.p}->{params.q} over {len(per_radius)} radii: spread {spread:.4g}")
    return HypercontractiveReport(per_radius=per_radius, spread=spread, duality_checks=duality,
                                  duality_consistent=consistent, passed=passed)


def _two_radius_bound(grid: GridSpec, params: DGParams, r: float, r0: float, k: int, ball_nodes: int,
                      annulus_nodes: int, improved: bool) -> float:
    """Right-hand side of the two-radius annulus bound without its constant."""
    base = r ** (-params.d * params.smoothing)
    volume = (1 + ball_nodes * grid.weight / r ** params.d) ** inverse(params.q)
    if k <= 1:
        return base if improved else base * volume
    separation = (2.0 ** (k - 1) - 1) * r0
    tail = (separation / r) ** (-params.beta) * (annulus_nodes * grid.weight / r ** params.d) ** inverse(params.sigma)
    return base * volume * tail


def _two_radius_constants(grid: GridSpec, params: DGParams, r: float, r0: float,
                          points: Sequence[ProfilePoint]) -> Tuple[float, float]:
    """(constant over all annuli, constant of k in {0, 1} without the volume factor) at one r0."""
    ball_nodes = points[0][2]
    worst = 0.0
    worst_near = 0.0
    for k, norm, nodes in points:
        if nodes == 0 or _reaches_wrap(grid, r0, k):
            continue
        worst = max(worst, norm.upper / _two_radius_bound(grid, params, r, r0, k, ball_nodes, nodes, False))
        if k <= 1:
            worst_near = max(worst_near, norm.upper / _two_radius_bound(grid, params, r, r0, k, ball_nodes,
                                                                        nodes, True))
    return worst, worst_near


def check_two_radius(kernel: KernelMatrix, r: float, center: int, params: DGParams, kmax: int,
                     ratios: Sequence[float] = TWO_RADIUS_RATIOS, constant_spread: float = TWO_RADIUS_SPREAD,
                     c_dg: Optional[float] = None, norm_gap: float = 3.0, seed: int = 0) -> TwoRadiusReport:
    """
    Annulus norms around balls of radius r0 != r against the two-radius bound, one fitted constant per r0/r.

    The constants must agree across r0/r within constant_spread, the r0 = r constant must agree with the
    C_DG of the plain annulus profile at r, and the k in {0, 1} constants without the volume factor must
    stay within constant_spread of the reference: c_dg when given (which then also caps every two-radius
    constant), the profile C_DG otherwise.
    """
    if params.d != kernel.grid.d:
        raise DomainError(f"parameters are for d={params.d}, kernel lives in d={kernel.grid.d}")
    if c_dg is not None and not c_dg > 0:
        raise DomainError(f"c_dg must be positive, got {c_dg}")
    grid = kernel.grid
    relaxed = params.beta <= params.d_over_sigma + params.d * inverse(params.q)
    if relaxed:
        logger.warning(f"⚠️ relaxed regime: beta={params.beta} <= d(1/sigma + 1/q), only beta > d/sigma is assumed")

    anchor = annulus_profile(kernel, center, r, params.p, params.q, kmax, norm_gap, seed)
    profile_constant = max((norm.upper / profile_normalizer(r, params.d, params.smoothing, params.d_over_sigma,
                                                             params.beta, k)
                            for k, norm, nodes in anchor if nodes > 0), default=0.0)
    anchored, _ = _two_radius_constants(grid, params, r, r, anchor)

    constants = {}
    improved_constants = {}
    for ratio in ratios:
        r0 = ratio * r
        points = anchor if ratio == 1.0 else annulus_profile(kernel, center, r0, params.p, params.q, kmax,
                                                              norm_gap, seed)
        constants[_key(ratio)], improved_constants[_key(ratio)] = _two_radius_constants(grid, params, r, r0, points)

    reference = profile_constant if c_dg is None else c_dg
    limit = constant_spread * reference * (1 + MATCH_RTOL)
    spread = _spread(constants.values())
    agreement = _spread((anchored, profile_constant))
    held = all(value <= limit for value in improved_constants.values())
    if c_dg is not None:
        held = held and all(value <= limit for value in constants.values())
    passed = spread <= constant_spread and agreement <= constant_spread and held
    icon = "✅" if passed else "⚠️"
    logger.info(f"{icon} two-radius check at r={r}: constant spread {spread:.4g} over r0/r in {list(ratios)}, "
                f"profile agreement {agreement:.4g}, reference {reference:.6g}")
    return TwoRadiusReport(constants=constants, improved_constants=improved_constants, relaxed_regime=relaxed,
                           profile_constant=profile_constant, reference_constant=reference, agreement=agreement,
                           spread=spread, passed=passed)


def check_geom_annuli(trials: int = 100000, seed: int = 0, d: int = 2) -> int:
    """
    Random configurations |x - z| <= r + r0 in R^d with a witness point y; counts breaches of
    2^{k-3} r0 <= 2^j r <= 2^{k+3} r0 (j, k >= 2) and (2^{j-1} - 1) r <= 2 r0 (y in B_x(r0), j >= 1).
    """
    rng = np.random.default_rng(seed)

    def directions(count: int) -> np.ndarray:
        v = rng.standard_normal((count, d))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    r = np.exp(rng.uniform(math.log(0.1), math.log(10.0), trials))
    r0 = np.exp(rng.uniform(math.log(0.1), math.log(10.0), trials))
    x = directions(trials) * ((r + r0) * rng.uniform(0, 1, trials) ** (1 / d))[:, None]
    in_ball = rng.uniform(0, 1, trials) < 0.5
    far = directions(trials) * (r * np.exp(rng.uniform(math.log(0.01), math.log(2.0 ** 12), trials)))[:, None]
    near = x + directions(trials) * (r0 * rng.uniform(0, 1, trials) ** (1 / d))[:, None]
    y = np.where(in_ball[:, None], near, far)

    j = annulus_index(np.linalg.norm(y, axis=1), r)
    k = annulus_index(np.linalg.norm(y - x, axis=1), r0)
    scale = 2.0 ** j * r
    both = (j >= 2) & (k >= 2)
    first = both & ((scale < 2.0 ** (k - 3) * r0 * (1 - EDGE_RTOL)) | (scale > 2.0 ** (k + 3) * r0 * (1 + EDGE_RTOL)))
    second = (j >= 1) & (k == 0) & ((2.0 ** (j - 1) - 1) * r > 2 * r0 * (1 + EDGE_RTOL))
    violations = int(np.count_nonzero(first) + np.count_nonzero(second))
    logger.info(f"📐 annulus geometry: {int(both.sum())} annulus and {int(((j >= 1) & (k == 0)).sum())} ball "
                f"witnesses over {trials} trials, {violations} violations")
    return violations


def check_dual(kernels: RadiusKernels, center: int, p: float, beta: float, kmax: int,
               slope_from_k: int = 2, slope_tol: float = SLOPE_TOL, constant_spread: float = 2.0,
               norm_gap: float = 3.0, seed: int = 0) -> DualReport:
    """(2, p') and (p, 2) annulus profiles with volume exponents d/2 and d/p', one fit per radius."""
    p_dual = conjugate_exponent(p)
    constants_2 = {}
    constants_p = {}
    slopes_2 = {}
    slopes_p = {}
    passed = True
    for r, kernel in kernels:
        grid = kernel.grid
        d = grid.d
        to_dual = fit_profile(annulus_profile(kernel, center, r, 2.0, p_dual, kmax, norm_gap, seed), r, d,
                              0.5 - inverse(p_dual), d / 2, beta, grid.box_length, slope_from_k, slope_tol)
        to_two = fit_profile(annulus_profile(kernel, center, r, p, 2.0, kmax, norm_gap, seed), r, d,
                             inverse(p) - 0.5, d * inverse(p_dual), beta, grid.box_length, slope_from_k, slope_tol)
        constants_2[_key(r)] = to_dual.fitted_CDG
        constants_p[_key(r)] = to_two.fitted_CDG
        slopes_2[_key(r)] = to_dual.fitted_slope
        slopes_p[_key(r)] = to_two.fitted_slope
        passed = passed and to_dual.passed and to_two.passed

    spread = max(_spread(constants_2.values()), _spread(constants_p.values()))
    passed = passed and spread <= constant_spread
    icon = "✅" if passed else "⚠️"
    logger.info(f"{icon} dual profiles p={p} over {len(constants_2)} radii: constant spread {spread:.4g}")
    return DualReport(constants_2_to_pdual=constants_2, constants_p_to_2=constants_p, slopes_2_to_pdual=slopes_2,
                      slopes_p_to_2=slopes_p, spread=spread, passed=passed)


def check_lp_bounded(kernels: RadiusKernels, center: int, p: float, beta: float, kmax: int, c_dg: float = 1.0,
                     slack: float = CONSTANT_SLACK, constant_spread: float = 2.0, norm_gap: float = 3.0,
                     seed: int = 0) -> LpBoundedReport:
    """(p, p, p') annulus constants and ||T_r||_{p->p} across radii, both held to slack * c_dg."""
    if not c_dg > 0:
        raise DomainError(f"c_dg must be positive, got {c_dg}")
    p_dual = conjugate_exponent(p)
    limit = slack * c_dg
    profile_constants = {}
    operator_norms = {}
    for r, kernel in kernels:
        d = kernel.grid.d
        points = annulus_profile(kernel, center, r, p, p, kmax, norm_gap, seed)
        profile_constants[_key(r)] = max(
            (norm.upper / profile_normalizer(r, d, 0.0, d * inverse(p_dual), beta, k)
             for k, norm, nodes in points if nodes > 0), default=0.0)
        operator_norms[_key(r)] = kernel_opnorm(kernel, p, p, norm_gap, seed).upper
        if not is_exact(p, p):
            logger.debug(f"p={p}: operator norm at r={r} is an interpolation upper bound")

    spread = _spread(operator_norms.values())
    bounded = all(value <= limit * (1 + MATCH_RTOL)
                  for value in (*profile_constants.values(), *operator_norms.values()))
    passed = bounded and spread <= constant_spread
    icon = "✅" if passed else "⚠️"
    logger.info(f"{icon} L^{p} boundedness over {len(operator_norms)} radii: norm spread {spread:.4g}, "
                f"largest constant {max(profile_constants.values(), default=0.0):.6g} against {limit:.6g}")
    return LpBoundedReport(profile_constants=profile_constants, operator_norms=operator_norms, c_dg=c_dg,
                           limit=limit, spread=spread, passed=passed)


class DaviesGaffneyService:
    """Profile fits and estimate checks of stored kernels under one set of tolerances"""

    def __init__(self, norms: Optional[NormService] = None, jobs: int = 1, slope_tol: float = SLOPE_TOL,
                 slope_from_k: int = 2, radius_spread: float = 2.0, two_radius_spread: float = TWO_RADIUS_SPREAD,
                 slack: float = CONSTANT_SLACK):
        self.norms = norms or NormService()
        self.jobs = jobs
        self.slope_tol = slope_tol
        self.slope_from_k = slope_from_k
        self.radius_spread = radius_spread
        self.two_radius_spread = two_radius_spread
        self.slack = slack

    def profile(self, kernel: KernelMatrix, center: int, r: float, params: DGParams, kmax: int) -> DGReport:
        return dg_profile(kernel, center, r, params, kmax, self.slope_from_k, self.slope_tol,
                          self.norms.norm_gap, self.norms.seed, self.jobs)

    def pointwise(self, kernel: KernelMatrix, r: float, params: DGParams, center: Optional[int] = None,
                  kmax: Optional[int] = None) -> PointwiseEquivalenceReport:
        return pointwise_equivalence_check(kernel, r, params.beta, params.sigma, center, kmax)

    def hypercontractive(self, kernels: RadiusKernels, params: DGParams,
                         c_dg: float = 1.0) -> HypercontractiveReport:
        return check_hypercontractive(kernels, params, c_dg, self.radius_spread, self.norms.norm_gap,
                                      self.norms.seed)

    def two_radius(self, kernel: KernelMatrix, r: float, center: int, params: DGParams, kmax: int,
                   c_dg: Optional[float] = None) -> TwoRadiusReport:
        return check_two_radius(kernel, r, center, params, kmax, constant_spread=self.two_radius_spread, c_dg=c_dg,
                                norm_gap=self.norms.norm_gap, seed=self.norms.seed)

    def dual(self, kernels: RadiusKernels, center: int, params: DGParams, kmax: int) -> DualReport:
        return check_dual(kernels, center, params.p, params.beta, kmax, self.slope_from_k, self.slope_tol,
                          self.radius_spread, self.norms.norm_gap, self.norms.seed)

    def lp_bounded(self, kernels: RadiusKernels, center: int, params: DGParams, kmax: int,
                   c_dg: float = 1.0) -> LpBoundedReport:
        return check_lp_bounded(kernels, center, params.p, params.beta, kmax, c_dg, self.slack, self.radius_spread,
                                self.norms.norm_gap, self.norms.seed)
