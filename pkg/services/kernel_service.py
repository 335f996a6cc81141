"""
Free kernel service
Evaluates the complex-time fractional heat kernel e^{-z(-Delta)^{alpha/2}}(x) on R^d by
radial Fourier inversion, together with its closed forms and the algebraic tail envelope.
"""
import cmath
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from schemas.requests import ComplexTime, KernelQuery, QuadratureSpec
from schemas.responses import BGFit, KernelValue
from services.errors import DomainError, PrecisionExhaustedError

logger = logging.getLogger(__name__)

ComplexLike = Union[ComplexTime, complex, float]
ArrayLike = Union[float, Sequence[float], np.ndarray]

GRADING_LEVELS = 40
REFERENCE_COLUMNS = ("alpha", "d", "re_z", "im_z", "r", "re_k", "im_k", "abs_err")


def _as_complex(z: ComplexLike) -> complex:
    value = z.value if isinstance(z, ComplexTime) else complex(z)
    if not value.real > 0:
        raise DomainError(f"z={value} is not in the open right half-plane")
    return value


def sphere_area(d: int) -> float:
    """|S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def poisson_constant(d: int) -> float:
    """c_d = Gamma((d+1)/2) / pi^{(d+1)/2}, fixed by unit mass at real time."""
    return math.gamma((d + 1) / 2) / math.pi ** ((d + 1) / 2)


def kernel_at_origin(alpha: float, d: int, z: ComplexLike) -> complex:
    """(2 pi)^{-d} |S^{d-1}| Gamma(d/alpha) / (alpha z^{d/alpha}), principal branch."""
    if not alpha > 0 or d < 1:
        raise DomainError(f"invalid order alpha={alpha} or dimension d={d}")
    value = _as_complex(z)
    power = cmath.exp(d / alpha * cmath.log(value))
    return (2 * math.pi) ** (-d) * sphere_area(d) * math.gamma(d / alpha) / (alpha * power)


def kernel_poisson(d: int, z: ComplexLike, r: ArrayLike) -> Union[complex, np.ndarray]:
    """c_d z / (z^2 + r^2)^{(d+1)/2} for alpha = 1."""
    value = _as_complex(z)
    radius = np.asarray(r, dtype=float)
    base = value ** 2 + radius ** 2
    if np.any((np.imag(base) == 0) & (np.real(base) <= 0)):
        raise DomainError("z^2 + r^2 reached the branch cut")
    result = poisson_constant(d) * value * np.power(base.astype(complex), -(d + 1) / 2)
    return complex(result) if result.ndim == 0 else result


def kernel_gauss(d: int, z: ComplexLike, r: ArrayLike) -> Union[complex, np.ndarray]:
    """(4 pi z)^{-d/2} exp(-r^2 / (4z)) for alpha = 2."""
    value = _as_complex(z)
    radius = np.asarray(r, dtype=float)
    result = cmath.exp(-d / 2 * cmath.log(4 * math.pi * value)) * np.exp(-radius ** 2 / (4 * value))
    return complex(result) if np.ndim(result) == 0 else result


def kernel_closed_form(alpha: float, d: int, z: ComplexLike, r: ArrayLike) -> Union[complex, np.ndarray]:
    if alpha == 1:
        return kernel_poisson(d, z, r)
    if alpha == 2:
        return kernel_gauss(d, z, r)
    raise DomainError(f"no closed form for alpha={alpha}")


def _scaled_bessel(nu: float, x: np.ndarray) -> np.ndarray:
    """x^{-nu} J_nu(x), continuous at x = 0."""
    out = np.empty_like(x)
    at_zero = x == 0
    out[at_zero] = 2.0 ** (-nu) / math.gamma(nu + 1)
    rest = x[~at_zero]
    out[~at_zero] = special.jv(nu, rest) * rest ** (-nu)
    return out


def _integrand(s: np.ndarray, alpha: float, d: int, z: complex, r: float) -> np.ndarray:
    nu = d / 2 - 1
    return s ** (d - 1) * _scaled_bessel(nu, s * r) * np.exp(-z * s ** alpha)


def _truncation_radius(alpha: float, d: int, z: complex, tol: float) -> float:
    scale = abs(z) ** (-1 / alpha)
    radius = scale * (-math.log(tol) / (z.real / abs(z))) ** (1 / alpha)
    while math.exp(-z.real * radius ** alpha) * (radius / scale) ** d > tol:
        radius *= 1.1
    return radius


def _initial_breakpoints(alpha: float, z: complex, r: float, radius: float) -> np.ndarray:
    scale = abs(z) ** (-1 / alpha)
    width = radius / 8
    if r > 0:
        width = min(width, math.pi / r)
    if z.imag != 0:
        slowest = max(radius, scale) if alpha >= 1 else scale
        frequency = abs(z.imag) * alpha * slowest ** (alpha - 1)
        width = min(width, math.pi / frequency)
    uniform = np.linspace(0.0, radius, int(math.ceil(radius / width)) + 1)
    graded = scale * 2.0 ** -np.arange(1, GRADING_LEVELS + 1)
    graded = graded[graded < radius]
    return np.unique(np.concatenate([uniform, graded]))


class _PanelRule:
    """Nested Gauss-Legendre pair used for panel error estimates."""

    def __init__(self, nodes: int):
        self.coarse = leggauss(nodes)
        self.fine = leggauss(2 * nodes)

    def apply(self, left: np.ndarray, right: np.ndarray, func) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        mid = (left + right)[:, None] / 2
        half = (right - left)[:, None] / 2
        coarse_x, coarse_w = self.coarse
        fine_x, fine_w = self.fine
        coarse = (func(mid + half * coarse_x) * coarse_w).sum(axis=1) * half[:, 0]
        fine_values = func(mid + half * fine_x)
        fine = (fine_values * fine_w).sum(axis=1) * half[:, 0]
        mass = (np.abs(fine_values) * fine_w).sum(axis=1) * half[:, 0]
        return coarse, fine, mass


def kernel_free(query: KernelQuery, spec: QuadratureSpec = QuadratureSpec()) -> KernelValue:
    """
    Free kernel through the radial reduction

        K(z, r) = (2 pi)^{-d/2} int_0^inf s^{d-1} (s r)^{-nu} J_nu(s r) e^{-z s^alpha} ds,  nu = d/2 - 1,

    which equals (2 pi)^{-d/2} r^{1-d/2} int e^{-z s^alpha} s^{d/2} J_nu(s r) ds for r > 0 and the Bessel
    limit form at r = 0. Raises PrecisionExhaustedError instead of returning an uncertified value.
    """
    alpha, d, r = query.alpha, query.d, query.r
    z = query.z.value
    prefactor = (2 * math.pi) ** (-d / 2)
    scale = abs(kernel_at_origin(alpha, d, z))
    tol_int = spec.panel_tol * scale / prefactor
    eps = np.finfo(float).eps

    radius = _truncation_radius(alpha, d, z, spec.truncation_tol)
    points = _initial_breakpoints(alpha, z, r, radius)
    if len(points) - 1 > spec.max_panels:
        raise PrecisionExhaustedError(f"{len(points) - 1} initial panels exceed max_panels={spec.max_panels}")

    rule = _PanelRule(spec.nodes_per_panel)

    def func(s: np.ndarray) -> np.ndarray:
        return _integrand(s, alpha, d, z, r)

    left, right = points[:-1], points[1:]
    total = 0j
    quad_err = 0.0
    mass = 0.0
    accepted = 0
    while left.size:
        coarse, fine, panel_mass = rule.apply(left, right, func)
        err = np.abs(fine - coarse)
        width = right - left
        allowed = tol_int * np.maximum(width / radius, 1.0 / spec.max_panels)
        done = (err <= allowed) | (err <= 16 * eps * panel_mass) | (width <= 64 * eps * np.maximum(right, 1e-300))
        total += fine[done].sum()
        quad_err += err[done].sum()
        mass += panel_mass[done].sum()
        accepted += int(done.sum())
        left, right = left[~done], right[~done]
        if accepted + 2 * left.size > spec.max_panels:
            partial = prefactor * (total + fine[~done].sum())
            raise PrecisionExhaustedError(
                f"panel budget {spec.max_panels} exhausted at r={r}, z={z}",
                partial_estimate=complex(partial),
                abs_err=prefactor * (quad_err + float(err[~done].sum())),
            )
        middle = (left + right) / 2
        left, right = np.concatenate([left, middle]), np.concatenate([middle, right])

    value = complex(prefactor * total)
    rounding = 4 * eps * prefactor * mass
    truncation = prefactor * math.exp(-z.real * radius ** alpha) * radius ** d
    abs_err = prefactor * quad_err + rounding + truncation
    if rounding > spec.panel_tol * scale:
        raise PrecisionExhaustedError(f"cancellation: integrand mass {prefactor * mass:.3e} against value {value}",
                                      partial_estimate=value, abs_err=abs_err)
    if abs(query.z.theta) > spec.max_angle or query.scaled_distance > spec.max_scaled_distance:
        raise PrecisionExhaustedError(
            f"outside validity envelope (|theta|={abs(query.z.theta):.3f}, r/|z|^(1/alpha)={query.scaled_distance:.3g})",
            partial_estimate=value, abs_err=abs_err)
    logger.debug(f"kernel alpha={alpha} d={d} z={z} r={r}: {value} +/- {abs_err:.2e} ({accepted} panels)")
    return KernelValue(value=value, abs_err=abs_err, panels=accepted)


def evaluate_many(queries: Sequence[KernelQuery], spec: QuadratureSpec = QuadratureSpec(),
                  jobs: int = 1) -> List[KernelValue]:
    """Ordered evaluation of many queries, optionally on a thread pool."""
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda q: kernel_free(q, spec), queries))
    return [kernel_free(q, spec) for q in queries]


def bg_bound(alpha: float, d: int, t: float, r: ArrayLike) -> Union[float, np.ndarray]:
    """Constant-free envelope t / (t^{1/alpha} + r)^{d + alpha}."""
    if not 0 < alpha < 2:
        raise DomainError(f"envelope needs alpha in (0, 2), got {alpha}")
    result = t / (t ** (1 / alpha) + np.asarray(r, dtype=float)) ** (d + alpha)
    return float(result) if np.ndim(result) == 0 else result


def tail_coefficient(alpha: float, d: int) -> float:
    """A with K(t, r) ~ A t r^{-d-alpha} as r -> infinity."""
    if not 0 < alpha < 2:
        raise DomainError(f"algebraic tail needs alpha in (0, 2), got {alpha}")
    return (alpha * 2 ** (alpha - 1) * math.pi ** (-d / 2 - 1) * math.sin(math.pi * alpha / 2)
            * math.gamma((d + alpha) / 2) * math.gamma(alpha / 2))


def refine_grid(values: Sequence[float]) -> List[float]:
    """Insert the geometric (or arithmetic, next to zero) midpoint between neighbours."""
    ordered = sorted(set(float(v) for v in values))
    refined = [ordered[0]]
    for low, high in zip(ordered, ordered[1:]):
        refined.append(math.sqrt(low * high) if low > 0 else (low + high) / 2)
        refined.append(high)
    return refined


def _envelope_sup(alpha: float, d: int, ts: Sequence[float], rs: Sequence[float], spec: QuadratureSpec,
                  jobs: int) -> Tuple[float, float, float]:
    pairs = [(t, r) for t in ts for r in rs]
    queries = [KernelQuery(alpha=alpha, d=d, z=ComplexTime.real(t), r=r) for t, r in pairs]
    values = evaluate_many(queries, spec, jobs)
    ratios = [abs(v.value) / bg_bound(alpha, d, t, r) for v, (t, r) in zip(values, pairs)]
    worst = int(np.argmax(ratios))
    return ratios[worst], pairs[worst][0], pairs[worst][1]


def fit_bg_constant(alpha: float, d: int, ts: Sequence[float], rs: Sequence[float],
                    spec: QuadratureSpec = QuadratureSpec(), jobs: int = 1) -> BGFit:
    """sup |kernel| / envelope over the (t, r) grid, and again on the refined grid."""
    if not 0 < alpha < 2:
        raise DomainError(f"envelope needs alpha in (0, 2), got {alpha}")
    constant, worst_t, worst_r = _envelope_sup(alpha, d, ts, rs, spec, jobs)
    refined, _, _ = _envelope_sup(alpha, d, refine_grid(ts), refine_grid(rs), spec, jobs)
    change = abs(refined - constant) / constant
    stable = math.isfinite(refined) and change < 0.05
    icon = "✅" if stable else "⚠️"
    logger.info(f"{icon} envelope constant alpha={alpha} d={d}: {constant:.6g} -> {refined:.6g} ({change:.2%})")
    return BGFit(constant=constant, refined_constant=refined, relative_change=change, stable=stable,
                 worst_t=worst_t, worst_r=worst_r)


def tail_slope(alpha: float, d: int, t: float, radii: Sequence[float],
               spec: QuadratureSpec = QuadratureSpec(), jobs: int = 1) -> float:
    """log-log regression slope of |K(t, r)| over the given radii."""
    queries = [KernelQuery(alpha=alpha, d=d, z=ComplexTime.real(t), r=r) for r in radii]
    moduli = [abs(v.value) for v in evaluate_many(queries, spec, jobs)]
    slope, _ = np.polyfit(np.log(radii), np.log(moduli), 1)
    return float(slope)


def radial_mass(alpha: float, d: int, t: float, spec: QuadratureSpec = QuadratureSpec(),
                r_max: float = 40.0, panels: int = 32, nodes: int = 12, jobs: int = 1) -> float:
    """int_{R^d} K(t, x) dx from radial samples, closed with the algebraic tail beyond r_max."""
    x, w = leggauss(nodes)
    edges = np.linspace(0.0, r_max, panels + 1)
    mid = ((edges[:-1] + edges[1:]) / 2)[:, None]
    half = ((edges[1:] - edges[:-1]) / 2)[:, None]
    radii = (mid + half * x).ravel()
    weights = (half * w).ravel()
    queries = [KernelQuery(alpha=alpha, d=d, z=ComplexTime.real(t), r=float(r)) for r in radii]
    values = np.array([v.value.real for v in evaluate_many(queries, spec, jobs)])
    inner = sphere_area(d) * float(np.sum(values * radii ** (d - 1) * weights))
    tail = 0.0
    if alpha < 2:
        tail = sphere_area(d) * tail_coefficient(alpha, d) * t * r_max ** (-alpha) / alpha
    return inner + tail


def load_reference_table(path: Union[str, Path]) -> List[Dict[str, float]]:
    """Read the whitespace separated reference kernel table, '#' starts a comment."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != len(REFERENCE_COLUMNS):
            raise DomainError(f"reference row has {len(fields)} columns: {line!r}")
        row = dict(zip(REFERENCE_COLUMNS, (float(f) for f in fields)))
        row["d"] = int(row["d"])
        rows.append(row)
    return rows


class KernelService:
    """Free kernel evaluation under one quadrature configuration"""

    def __init__(self, spec: QuadratureSpec = QuadratureSpec(), jobs: int = 1):
        self.spec = spec
        self.jobs = jobs

    def values(self, alpha: float, d: int, z: ComplexTime, radii: Sequence[float]) -> List[KernelValue]:
        queries = [KernelQuery(alpha=alpha, d=d, z=z, r=r) for r in radii]
        results = evaluate_many(queries, self.spec, self.jobs)
        logger.info(f"🧮 free kernel alpha={alpha} d={d} z={z.value} at {len(results)} radii")
        return results

    def mass(self, alpha: float, d: int, t: float) -> float:
        return radial_mass(alpha, d, t, self.spec, jobs=self.jobs)
