"""
Verification service
End-to-end sweeps of the complex-time estimates over (theta, |z|, r or zeta, k). Every parameter
point becomes a VerificationRow; constants are fitted from the sweep and exponents are tested.
"""
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from schemas.requests import ComplexTime, ExperimentConfig, conjugate_exponent, inverse
from schemas.responses import DGReport, DiscreteOperator, ExperimentSummary, KernelMatrix, SuiteResult, VerificationRow
from services.davies_gaffney_service import ProfilePoint, annulus_profile, dg_profile, fit_profile, intervals_match
from services.errors import DegenerateProfileError, DomainError, LabError
from services.norm_service import kernel_opnorm
from services.operator_service import (
    OperatorService,
    column_l2_tail,
    periodized_poisson_1d,
    poisson_l2_tail,
    semigroup_kernel,
    torus_distance_matrix,
    torus_distances,
    weighted_l2_tail,
)
from services.pl_service import angle_fraction, effective_exponent, sector_decay

logger = logging.getLogger(__name__)

PASS, FAIL, SKIP, ERROR = "PASS", "FAIL", "SKIP", "ERROR"

# scaled-distance windows of the theta = 0 slope regressions
TAIL_WINDOW = (6.0, 12.0)
POINTWISE_WINDOW = (10.0, 100.0)
WINDOW_POINTS = 6
# slope radii stay below this fraction of L, where the periodic images are negligible
IMAGE_REACH = 1 / 8
MIN_WINDOW_RATIO = 1.25
JUDGE_RTOL = 1e-12


class Point(NamedTuple):
    """A measured LHS/RHS pair awaiting the constant fit of its family."""
    family: str
    parameters: Dict[str, float]
    lhs: float
    rhs: float
    veto: str = ""


Entry = Union[VerificationRow, Point]


@dataclass
class Partial:
    """Output of one parameter task, in report order."""
    entries: List[Entry] = field(default_factory=list)
    constants: Dict[str, float] = field(default_factory=dict)
    slopes: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Row helpers
# ---------------------------------------------------------------------------

def _ratio(lhs: float, rhs: float) -> float:
    if rhs:
        return lhs / rhs
    return 0.0 if lhs == 0 else math.copysign(math.inf, lhs)


def _row(cfg: ExperimentConfig, parameters: Dict[str, float], lhs: float, rhs: float, status: str,
         note: str = "") -> VerificationRow:
    parameters = {key: float(value) for key, value in parameters.items()}
    return VerificationRow(experiment_id=cfg.experiment_id, parameters=parameters, lhs=float(lhs),
                           rhs=float(rhs), ratio=float(_ratio(lhs, rhs)), status=status, note=note)


def _skip(cfg: ExperimentConfig, parameters: Dict[str, float], note: str) -> VerificationRow:
    logger.warning(f"⚠️ {cfg.experiment_id} {parameters}: skipped, {note}")
    return _row(cfg, parameters, math.nan, math.nan, SKIP, note)


def _label(parameters: Dict[str, float]) -> str:
    return ",".join(f"{key}={value:g}" for key, value in parameters.items())


def _slope_row(cfg: ExperimentConfig, parameters: Dict[str, float], slope: float, bound: float, tol: float,
               note: str) -> VerificationRow:
    """One-sided decay check: slope <= bound + tol."""
    status = PASS if slope <= bound + tol else FAIL
    return _row(cfg, parameters, slope, bound, status, f"{note}, tolerance {tol:g}")


def _profile_row(cfg: ExperimentConfig, parameters: Dict[str, float], report: DGReport, note: str) -> VerificationRow:
    status = PASS if report.passed else FAIL
    return _row(cfg, parameters, report.fitted_slope, report.expected_slope, status,
                f"{note}: C_DG={report.fitted_CDG:.6g}, tolerance {report.slope_tol:g}")


def _judge(cfg: ExperimentConfig, partials: Sequence[Partial]) -> Tuple[List[VerificationRow], Dict[str, float],
                                                                        Dict[str, float]]:
    """
    Turn points into rows. Each family's constant is its largest ratio; the calibration constant is the
    largest ratio among the family's points at the smallest |theta|, and a point passes when its ratio
    stays within constant_spread times the calibration constant.
    """
    families: Dict[str, List[Point]] = {}
    for partial in partials:
        for entry in partial.entries:
            if isinstance(entry, Point):
                families.setdefault(entry.family, []).append(entry)

    limits = {}
    constants = {}
    spreads = {}
    for family, points in families.items():
        ratios = [_ratio(point.lhs, point.rhs) for point in points]
        calibration_angle = min(abs(point.parameters.get("theta", 0.0)) for point in points)
        calibration = max(ratio for point, ratio in zip(points, ratios)
                          if abs(point.parameters.get("theta", 0.0)) == calibration_angle)
        fitted = max(ratios)
        limits[family] = cfg.tolerances.constant_spread * calibration * (1 + JUDGE_RTOL)
        constants[family] = fitted
        constants[f"{family}_calibration"] = calibration
        spreads[f"{family}_spread"] = _ratio(fitted, calibration) if fitted > 0 else 1.0

    rows = []
    for partial in partials:
        for entry in partial.entries:
            if not isinstance(entry, Point):
                rows.append(entry)
                continue
            ratio = _ratio(entry.lhs, entry.rhs)
            if entry.veto:
                status, note = FAIL, entry.veto
            elif math.isfinite(ratio) and ratio <= limits[entry.family]:
                status, note = PASS, entry.family
            else:
                status = FAIL
                note = f"{entry.family}: ratio above {cfg.tolerances.constant_spread:g}x the calibration constant"
            rows.append(_row(cfg, entry.parameters, entry.lhs, entry.rhs, status, note))
    return rows, constants, spreads


def _run_tasks(cfg: ExperimentConfig, work: Callable[[Dict[str, float]], Partial],
               items: Sequence[Dict[str, float]]) -> SuiteResult:
    """Evaluate parameter tasks (in parallel when cfg.jobs > 1) and assemble them in input order."""
    def guarded(item: Dict[str, float]) -> Partial:
        try:
            return work(item)
        except (LabError, ValueError) as exc:
            logger.error(f"❌ {cfg.experiment_id} {item}: {exc}")
            return Partial(entries=[_row(cfg, item, math.nan, math.nan, ERROR, str(exc))])

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            partials = list(pool.map(guarded, items))
    else:
        partials = [guarded(item) for item in items]

    rows, constants, spreads = _judge(cfg, partials)
    result = SuiteResult(rows=rows, fitted_constants=constants, diagnostics=dict(spreads))
    for partial in partials:
        result.fitted_constants.update(partial.constants)
        result.slopes.update(partial.slopes)
        result.diagnostics.update(partial.diagnostics)
    return result


# ---------------------------------------------------------------------------
# Shared measurements
# ---------------------------------------------------------------------------

def _operator(cfg: ExperimentConfig) -> DiscreteOperator:
    return OperatorService(cfg.grid.node_cap).build(cfg.grid, cfg.alpha, cfg.potential)


def _has_oracle(cfg: ExperimentConfig) -> bool:
    return cfg.alpha == 1 and cfg.d == 1 and cfg.potential.kind == "zero"


def _poisson_reference(cfg: ExperimentConfig, z: ComplexTime) -> np.ndarray:
    """Periodized Poisson kernel sampled on the column of the center node."""
    return np.asarray(periodized_poisson_1d(z, torus_distances(cfg.grid, cfg.center_node), cfg.grid.box_length))


def _oracle_check(cfg: ExperimentConfig, kernel: KernelMatrix, partial: Partial) -> str:
    """Compare the grid column against the closed form; returns the veto note on drift."""
    if not _has_oracle(cfg):
        return ""
    z = kernel.z
    reference = _poisson_reference(cfg, z)
    column = kernel.values[:, cfg.center_node]
    drift = float(np.max(np.abs(column - reference)) / np.max(np.abs(reference)))
    parameters = {"theta": z.theta, "modulus": z.modulus}
    ok = drift <= cfg.tolerances.oracle_rtol
    partial.entries.append(_row(cfg, parameters, drift, cfg.tolerances.oracle_rtol, PASS if ok else FAIL,
                                "periodized Poisson oracle"))
    partial.diagnostics[f"oracle_drift[{_label(parameters)}]"] = drift
    if ok:
        return ""
    logger.warning(f"⚠️ oracle drift {drift:.3g} at z={z.value}")
    return f"oracle drift {drift:.3g}"


def _slope_radii(cfg: ExperimentConfig, modulus: float, window: Tuple[float, float],
                 offset: float) -> Optional[np.ndarray]:
    """
    Geometric radii across the scaled window, capped where periodic images start to matter. On the line
    they are snapped to node offsets (0.5 for tail sums, 0 for pointwise values).
    """
    low, high = cfg.slope_window if cfg.slope_window is not None else window
    scale = modulus ** (1.0 / cfg.alpha)
    high = min(high, cfg.grid.box_length * IMAGE_REACH / scale)
    if high < MIN_WINDOW_RATIO * low:
        return None
    radii = np.geomspace(low, high, WINDOW_POINTS) * scale
    if cfg.d == 1:
        h = cfg.grid.spacing
        radii = np.unique((np.floor(radii / h - offset + 0.5) + offset) * h)
    return radii


def _log_slope(radii: np.ndarray, values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if len(radii) < 2 or np.any(values <= 0):
        return -math.inf
    return float(np.polyfit(np.log(radii), np.log(values), 1)[0])


def _shell_max(kernel: KernelMatrix, r: float) -> float:
    """Largest |K(x, y)| over pairs at torus distance r, within half a grid step."""
    shell = np.abs(torus_distance_matrix(kernel.grid) - r) <= kernel.grid.spacing / 2
    if not np.any(shell):
        return 0.0
    return float(np.max(np.abs(kernel.values[shell])))


def _complex_slope(cfg: ExperimentConfig, points: Sequence[ProfilePoint], r: float, smoothing: float,
                   d_over_sigma: float, beta: float) -> Optional[float]:
    try:
        report = fit_profile(points, r, cfg.d, smoothing, d_over_sigma, beta, cfg.grid.box_length,
                             cfg.slope_from_k, cfg.tolerances.theorem_slope_tol)
    except DegenerateProfileError:
        return None
    return report.fitted_slope


def _annulus_points(family: str, base: Dict[str, float], points: Sequence[ProfilePoint],
                    rhs_at: Callable[[int], float], veto: str) -> List[Point]:
    return [Point(family, {**base, "k": float(k)}, norm.upper, rhs_at(k), veto)
            for k, norm, nodes in points if nodes > 0]


def _decay_rows(cfg: ExperimentConfig, partial: Partial, base: Dict[str, float], slope: Optional[float],
                decay: float, note: str) -> None:
    if slope is None:
        partial.entries.append(_skip(cfg, base, f"{note}: fewer than two usable annuli"))
        return
    partial.slopes[f"{note}[{_label(base)}]"] = slope
    partial.entries.append(_slope_row(cfg, base, slope, -decay, cfg.tolerances.theorem_slope_tol, note))


def _real_profile(cfg: ExperimentConfig, op: DiscreteOperator, modulus: float, partial: Partial,
                  note: str) -> Tuple[KernelMatrix, DGReport]:
    """The real-time hypothesis profile of e^{-tH} at r_t = t^(1/alpha)."""
    params = cfg.dg_params()
    real = semigroup_kernel(op, ComplexTime.real(modulus))
    report = dg_profile(real, cfg.center_node, modulus ** (1.0 / cfg.alpha), params, cfg.kmax, cfg.slope_from_k,
                        cfg.tolerances.slope_tol, cfg.tolerances.norm_gap, cfg.seed)
    parameters = {"theta": 0.0, "modulus": modulus}
    partial.entries.append(_profile_row(cfg, parameters, report, note))
    partial.constants[f"C_DG[modulus={modulus:g}]"] = report.fitted_CDG
    partial.slopes[f"{note}[modulus={modulus:g}]"] = report.fitted_slope
    return real, report


def _skip_thetas(cfg: ExperimentConfig, modulus: float, note: str) -> List[VerificationRow]:
    return [_skip(cfg, {"theta": theta, "modulus": modulus}, note) for theta in cfg.thetas]


def _radius_items(cfg: ExperimentConfig) -> List[Dict[str, float]]:
    return [{"theta": theta, "modulus": modulus} for theta in cfg.thetas for modulus in cfg.moduli]


def _modulus_items(cfg: ExperimentConfig) -> List[Dict[str, float]]:
    return [{"modulus": modulus} for modulus in cfg.moduli]


def _slope_modulus(cfg: ExperimentConfig) -> Optional[float]:
    """The theta = 0 slope is measured once, at the smallest modulus, where the torus looks widest."""
    return min(cfg.moduli) if 0.0 in cfg.thetas else None


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def run_cor_plapplied(cfg: ExperimentConfig) -> SuiteResult:
    """Weighted L^2 tails max_y int_{|x-y| >= r} |K_z(x, y)|^2 dx against the sector tail bound."""
    if not cfg.potential.is_nonnegative:
        raise DomainError("the tail estimate needs a nonnegative potential")
    op = _operator(cfg)
    grid = cfg.grid
    oracle = _has_oracle(cfg)
    real_power = cfg.d + 2 * cfg.alpha
    slope_modulus = _slope_modulus(cfg)

    def work(item: Dict[str, float]) -> Partial:
        theta, modulus = item["theta"], item["modulus"]
        z = ComplexTime(modulus=modulus, theta=theta)
        kernel = semigroup_kernel(op, z)
        scale = modulus ** (1.0 / cfg.alpha)
        beta = sector_decay(real_power, cfg.epsilon, theta)
        prefactor = z.real_part ** (-cfg.d / cfg.alpha)
        reference = _poisson_reference(cfg, z) if oracle else None
        partial = Partial()
        drift = 0.0
        line_drift = 0.0

        for scaled in cfg.radii:
            r = scaled * scale
            parameters = {"theta": theta, "modulus": modulus, "r": r}
            if r >= grid.box_length / 2:
                partial.entries.append(_skip(cfg, parameters, "r beyond half the torus"))
                continue
            lhs = weighted_l2_tail(kernel, r)
            veto = ""
            if reference is not None:
                exact = column_l2_tail(reference, grid, cfg.center_node, r)
                error = abs(lhs / exact - 1) if exact > 0 else abs(lhs)
                drift = max(drift, error)
                if error > cfg.tolerances.oracle_rtol:
                    veto = f"oracle drift {error:.3g}"
                    logger.warning(f"⚠️ tail oracle drift {error:.3g} at z={z.value}, r={r}")
                line = poisson_l2_tail(z, r)
                line_drift = max(line_drift, abs(exact / line - 1) if line > 0 else 0.0)
            partial.entries.append(Point("tail", parameters, lhs, prefactor * (1 + scaled) ** (-beta), veto))

        if reference is not None:
            partial.diagnostics[f"oracle_drift[{_label(item)}]"] = drift
            partial.diagnostics[f"real_line_drift[{_label(item)}]"] = line_drift

        if theta == 0.0 and modulus == slope_modulus:
            radii = _slope_radii(cfg, modulus, TAIL_WINDOW, 0.5)
            if radii is None:
                partial.entries.append(_skip(cfg, item, "tail slope: torus too small for the slope window"))
            else:
                slope = _log_slope(radii, [weighted_l2_tail(kernel, r) for r in radii])
                partial.slopes[f"tail[{_label(item)}]"] = slope
                ok = abs(slope + real_power) <= cfg.tolerances.slope_tol
                partial.entries.append(_row(cfg, item, slope, -real_power, PASS if ok else FAIL,
                                            f"tail slope, tolerance {cfg.tolerances.slope_tol:g}"))
        logger.debug(f"tail sweep done at z={z.value}")
        return partial

    return _run_tasks(cfg, work, _radius_items(cfg))


def run_cor_plapplied2(cfg: ExperimentConfig) -> SuiteResult:
    """Pointwise |K_z(x, y)| against (|z| cos theta)^(-d/alpha) (1 + |x-y|/|z|^(1/alpha))^(-beta(theta))."""
    if not cfg.potential.is_nonnegative:
        raise DomainError("the pointwise estimate needs a nonnegative potential")
    op = _operator(cfg)
    grid = cfg.grid
    real_power = cfg.d + cfg.alpha
    slope_modulus = _slope_modulus(cfg)

    def work(item: Dict[str, float]) -> Partial:
        theta, modulus = item["theta"], item["modulus"]
        z = ComplexTime(modulus=modulus, theta=theta)
        kernel = semigroup_kernel(op, z)
        scale = modulus ** (1.0 / cfg.alpha)
        beta = sector_decay(real_power, cfg.epsilon, theta)
        prefactor = z.real_part ** (-cfg.d / cfg.alpha)
        partial = Partial()
        veto = _oracle_check(cfg, kernel, partial)

        for scaled in cfg.radii:
            r = scaled * scale
            if cfg.d == 1:
                r = round(r / grid.spacing) * grid.spacing
            parameters = {"theta": theta, "modulus": modulus, "r": r}
            if r >= grid.box_length / 2:
                partial.entries.append(_skip(cfg, parameters, "r beyond half the torus"))
                continue
            partial.entries.append(Point("pointwise", parameters, _shell_max(kernel, r),
                                         prefactor * (1 + r / scale) ** (-beta), veto))

        if theta == 0.0 and modulus == slope_modulus:
            radii = _slope_radii(cfg, modulus, POINTWISE_WINDOW, 0.0)
            if radii is None:
                partial.entries.append(_skip(cfg, item, "pointwise slope: torus too small for the slope window"))
            else:
                slope = _log_slope(radii, [_shell_max(kernel, r) for r in radii])
                partial.slopes[f"pointwise[{_label(item)}]"] = slope
                ok = abs(slope + real_power) <= cfg.tolerances.slope_tol
                partial.entries.append(_row(cfg, item, slope, -real_power, PASS if ok else FAIL,
                                            f"pointwise slope, tolerance {cfg.tolerances.slope_tol:g}"))
        return partial

    return _run_tasks(cfg, work, _radius_items(cfg))


def run_thm_plgge(cfg: ExperimentConfig) -> SuiteResult:
    """Complex-time annulus bounds at r_z = |z|^(1/alpha) (cos theta)^(-zeta) and the integrated p -> q bound."""
    params = cfg.dg_params()
    op = _operator(cfg)
    d, p, q = cfg.d, params.p, params.q
    tol = cfg.tolerances

    def work(item: Dict[str, float]) -> Partial:
        modulus = item["modulus"]
        partial = Partial()
        _, real = _real_profile(cfg, op, modulus, partial, "real-time profile")
        if not real.passed:
            partial.entries.extend(_skip_thetas(cfg, modulus, "real-time profile did not pass"))
            return partial

        r_t = modulus ** (1.0 / cfg.alpha)
        for theta in cfg.thetas:
            z = ComplexTime(modulus=modulus, theta=theta)
            kernel = semigroup_kernel(op, z)
            veto = _oracle_check(cfg, kernel, partial)
            cosine = math.cos(theta)
            decay = effective_exponent(params.beta, d, params.sigma, cfg.epsilon, theta)
            prefactor = real.fitted_CDG * z.real_part ** (-(d / cfg.alpha) * params.smoothing)

            for zeta in cfg.zeta_values:
                base = {"theta": theta, "modulus": modulus, "zeta": zeta}
                r_z = r_t * cosine ** (-zeta)
                if r_z >= cfg.grid.box_length / 2:
                    partial.entries.append(_skip(cfg, base, "r_z beyond half the torus"))
                    continue
                points = annulus_profile(kernel, cfg.center_node, r_z, p, q, cfg.kmax, tol.norm_gap, cfg.seed)
                scale = prefactor * cosine ** (-d * zeta * inverse(q))
                partial.entries.extend(_annulus_points(
                    "annulus", base, points, lambda k: scale * 2.0 ** (-k * decay), veto))
                slope = _complex_slope(cfg, points, r_z, params.smoothing, params.d_over_sigma, params.beta)
                _decay_rows(cfg, partial, base, slope, decay, "annulus decay")

            norm = kernel_opnorm(kernel, p, q, tol.norm_gap, cfg.seed)
            partial.entries.append(Point("integrated", {"theta": theta, "modulus": modulus}, norm.upper,
                                         prefactor, veto))
        return partial

    return _run_tasks(cfg, work, _modulus_items(cfg))


def run_cor_plggecor(cfg: ExperimentConfig) -> SuiteResult:
    """(2, p') and (p, 2) complex-time annulus bounds and ||e^{-zH}||_{2->p'} = ||e^{-conj(z) H}||_{p->2}."""
    params = cfg.dg_params()
    op = _operator(cfg)
    d, p = cfg.d, params.p
    p_dual = conjugate_exponent(p)
    tol = cfg.tolerances
    smoothing = 0.5 - inverse(p_dual)

    def work(item: Dict[str, float]) -> Partial:
        modulus = item["modulus"]
        partial = Partial()
        real, hypothesis = _real_profile(cfg, op, modulus, partial, "real-time dual profile")
        if not hypothesis.passed:
            partial.entries.extend(_skip_thetas(cfg, modulus, "real-time dual profile did not pass"))
            return partial

        r_t = modulus ** (1.0 / cfg.alpha)
        real_parameters = {"theta": 0.0, "modulus": modulus}
        to_dual = fit_profile(annulus_profile(real, cfg.center_node, r_t, 2.0, p_dual, cfg.kmax, tol.norm_gap,
                                              cfg.seed),
                              r_t, d, smoothing, d / 2, params.beta, cfg.grid.box_length, cfg.slope_from_k,
                              tol.slope_tol)
        to_two = fit_profile(annulus_profile(real, cfg.center_node, r_t, p, 2.0, cfg.kmax, tol.norm_gap, cfg.seed),
                             r_t, d, smoothing, d * inverse(p_dual), params.beta, cfg.grid.box_length,
                             cfg.slope_from_k, tol.slope_tol)
        partial.entries.append(_profile_row(cfg, real_parameters, to_dual, "real-time 2->p' profile"))
        partial.entries.append(_profile_row(cfg, real_parameters, to_two, "real-time p->2 profile"))
        partial.constants[f"C_2_to_pdual[modulus={modulus:g}]"] = to_dual.fitted_CDG
        partial.constants[f"C_p_to_2[modulus={modulus:g}]"] = to_two.fitted_CDG

        for theta in cfg.thetas:
            z = ComplexTime(modulus=modulus, theta=theta)
            kernel = semigroup_kernel(op, z)
            veto = _oracle_check(cfg, kernel, partial)
            cosine = math.cos(theta)
            decay_dual = sector_decay(params.beta - d / 2, cfg.epsilon, theta)
            decay_two = sector_decay(params.beta - d * inverse(p_dual), cfg.epsilon, theta)
            prefactor = z.real_part ** (-(d / cfg.alpha) * smoothing)

            for zeta in cfg.zeta_values:
                base = {"theta": theta, "modulus": modulus, "zeta": zeta}
                r_z = r_t * cosine ** (-zeta)
                if r_z >= cfg.grid.box_length / 2:
                    partial.entries.append(_skip(cfg, base, "r_z beyond half the torus"))
                    continue
                first = annulus_profile(kernel, cfg.center_node, r_z, 2.0, p_dual, cfg.kmax, tol.norm_gap, cfg.seed)
                second = annulus_profile(kernel, cfg.center_node, r_z, p, 2.0, cfg.kmax, tol.norm_gap, cfg.seed)
                scale_dual = to_dual.fitted_CDG * prefactor * cosine ** (-d * zeta * inverse(p_dual))
                scale_two = to_two.fitted_CDG * prefactor * cosine ** (-d * zeta / 2)
                partial.entries.extend(_annulus_points(
                    "annulus_2_to_pdual", base, first, lambda k: scale_dual * 2.0 ** (-k * decay_dual), veto))
                partial.entries.extend(_annulus_points(
                    "annulus_p_to_2", base, second, lambda k: scale_two * 2.0 ** (-k * decay_two), veto))
                _decay_rows(cfg, partial, base,
                            _complex_slope(cfg, first, r_z, smoothing, d / 2, params.beta),
                            decay_dual, "2->p' decay")
                _decay_rows(cfg, partial, base,
                            _complex_slope(cfg, second, r_z, smoothing, d * inverse(p_dual), params.beta),
                            decay_two, "p->2 decay")

            parameters = {"theta": theta, "modulus": modulus}
            forward = kernel_opnorm(kernel, 2.0, p_dual, tol.norm_gap, cfg.seed)
            backward = kernel_opnorm(semigroup_kernel(op, z.conjugate()), p, 2.0, tol.norm_gap, cfg.seed)
            partial.entries.append(_row(cfg, parameters, forward.upper, backward.upper,
                                        PASS if intervals_match(forward, backward) else FAIL,
                                        "duality 2->p' versus conjugate p->2"))
            partial.entries.append(Point("integrated_2_to_pdual", parameters, forward.upper,
                                         to_dual.fitted_CDG * prefactor, veto))
        return partial

    return _run_tasks(cfg, work, _modulus_items(cfg))


def admissible_thetas(beta: float, d: int, p: float, epsilon: float,
                      thetas: Sequence[float]) -> List[Tuple[float, bool]]:
    """(theta, |theta|/gamma < 1 - (d/p)(beta - d/p')^(-1)) for each angle."""
    margin = beta - d * inverse(conjugate_exponent(p))
    if not margin > 0:
        raise DomainError(f"beta={beta} must exceed d/p'={d * inverse(conjugate_exponent(p))}")
    limit = 1 - d * inverse(p) / margin
    return [(theta, angle_fraction(epsilon, theta) < limit) for theta in thetas]


def run_cor_lp_complex(cfg: ExperimentConfig) -> SuiteResult:
    """Annulus and uniform p -> p bounds of e^{-zH} on the admissible angles."""
    params = cfg.dg_params()
    op = _operator(cfg)
    d, p = cfg.d, params.p
    p_dual = conjugate_exponent(p)
    tol = cfg.tolerances
    admissible = dict(admissible_thetas(params.beta, d, p, cfg.epsilon, cfg.thetas))

    def work(item: Dict[str, float]) -> Partial:
        modulus = item["modulus"]
        partial = Partial()
        _, real = _real_profile(cfg, op, modulus, partial, "real-time restricted profile")
        if not real.passed:
            partial.entries.extend(_skip_thetas(cfg, modulus, "real-time restricted profile did not pass"))
            return partial

        r_t = modulus ** (1.0 / cfg.alpha)
        for theta in cfg.thetas:
            if not admissible[theta]:
                partial.entries.append(_skip(cfg, {"theta": theta, "modulus": modulus},
                                             "theta violates the admissibility condition"))
                continue
            z = ComplexTime(modulus=modulus, theta=theta)
            kernel = semigroup_kernel(op, z)
            veto = _oracle_check(cfg, kernel, partial)
            cosine = math.cos(theta)
            decay = sector_decay(params.beta - d * inverse(p_dual), cfg.epsilon, theta)
            norm = kernel_opnorm(kernel, p, p, tol.norm_gap, cfg.seed)

            for zeta in cfg.zeta_values:
                base = {"theta": theta, "modulus": modulus, "zeta": zeta}
                r_z = r_t * cosine ** (-zeta)
                if r_z >= cfg.grid.box_length / 2:
                    partial.entries.append(_skip(cfg, base, "r_z beyond half the torus"))
                    continue
                power = -d * (zeta + 1.0 / cfg.alpha) * (0.5 - inverse(p_dual)) - d * zeta / 2
                scale = real.fitted_CDG * cosine ** power
                points = annulus_profile(kernel, cfg.center_node, r_z, p, p, cfg.kmax, tol.norm_gap, cfg.seed)
                partial.entries.extend(_annulus_points(
                    "annulus_p_to_p", base, points, lambda k: scale * 2.0 ** (-k * decay), veto))
                slope = _complex_slope(cfg, points, r_z, 0.0, d * inverse(p_dual), params.beta)
                _decay_rows(cfg, partial, base, slope, decay, "p->p decay")
                partial.entries.append(Point("uniform_p_to_p", base, norm.upper, scale, veto))
        return partial

    return _run_tasks(cfg, work, _modulus_items(cfg))


SUITE_RUNNERS: Dict[str, Callable[[ExperimentConfig], SuiteResult]] = {
    "cor_plapplied": run_cor_plapplied,
    "cor_plapplied2": run_cor_plapplied2,
    "thm_plgge": run_thm_plgge,
    "cor_plggecor": run_cor_plggecor,
    "cor_lp_complex": run_cor_lp_complex,
}


def run_experiment(cfg: ExperimentConfig) -> Tuple[List[VerificationRow], ExperimentSummary]:
    """Run the suite named by cfg.suite; errors outside any parameter point fail the whole experiment."""
    logger.info(f"🧮 running {cfg.experiment_id} ({cfg.suite}) on {cfg.grid.n_nodes} nodes")
    try:
        result = SUITE_RUNNERS[cfg.suite](cfg)
    except (LabError, ValueError) as exc:
        logger.error(f"❌ {cfg.experiment_id} failed: {exc}")
        return [], ExperimentSummary(success=False, message=f"{cfg.experiment_id} failed", error=str(exc),
                                     experiment_id=cfg.experiment_id, suite=cfg.suite)

    counts = Counter(row.status for row in result.rows)
    success = counts[FAIL] == 0 and counts[ERROR] == 0
    summary = ExperimentSummary(
        success=success,
        message=f"{counts[PASS]} passed, {counts[FAIL]} failed, {counts[SKIP]} skipped, {counts[ERROR]} errors",
        experiment_id=cfg.experiment_id,
        suite=cfg.suite,
        pass_count=counts[PASS],
        fail_count=counts[FAIL],
        skip_count=counts[SKIP],
        error_count=counts[ERROR],
        fitted_constants=result.fitted_constants,
        slopes=result.slopes,
        diagnostics=result.diagnostics,
    )
    icon = "✅" if success else "⚠️"
    logger.info(f"{icon} {cfg.experiment_id}: {summary.message}")
    return result.rows, summary


class VerificationService:
    """Runs experiments with the seed and worker count of one invocation"""

    def __init__(self, seed: Optional[int] = None, jobs: Optional[int] = None):
        if jobs is not None and jobs < 1:
            raise DomainError(f"jobs must be at least 1, got {jobs}")
        self.seed = seed
        self.jobs = jobs

    def prepare(self, cfg: ExperimentConfig) -> ExperimentConfig:
        """The config with this invocation's overrides applied."""
        updates = {}
        if self.seed is not None:
            updates["seed"] = self.seed
        if self.jobs is not None:
            updates["jobs"] = self.jobs
        return cfg.model_copy(update=updates) if updates else cfg

    def run(self, cfg: ExperimentConfig) -> Tuple[List[VerificationRow], ExperimentSummary]:
        return run_experiment(self.prepare(cfg))
