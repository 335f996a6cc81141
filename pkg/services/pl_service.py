"""
Sector interpolation service
Evaluates the Phragmen-Lindelof interpolation bound for holomorphic functions on the
right half-plane, the auxiliary functions of its three-lines proof, and empirical
certificates against sampled witnesses.
"""
import cmath
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import mpmath

from schemas.requests import EPSILON_MIN, HALF_PI, AnalyticWitness, ComplexTime, PolyBoundHypothesis, inverse
from schemas.responses import CertificationReport, ThreeLinesReport
from services.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

ComplexLike = Union[ComplexTime, complex, float]


def _check_epsilon(epsilon: float) -> None:
    if not EPSILON_MIN < epsilon < 1 - EPSILON_MIN:
        raise DomainError(f"epsilon={epsilon} outside ({EPSILON_MIN}, {1 - EPSILON_MIN})")


def _check_theta(theta: float) -> None:
    if not abs(theta) < HALF_PI:
        raise DomainError(f"theta={theta} outside (-pi/2, pi/2)")


def _check_gamma(gamma: float) -> None:
    if not 0 < gamma < HALF_PI:
        raise DomainError(f"gamma={gamma} outside (0, pi/2)")


def _as_complex(z: ComplexLike) -> complex:
    value = z.value if isinstance(z, ComplexTime) else complex(z)
    if not value.real > 0:
        raise DomainError(f"z={value} is not in the open right half-plane")
    return value


def gamma_eps(epsilon: float, theta: float) -> float:
    """gamma(eps, theta) = eps |theta| + (1 - eps) pi/2."""
    _check_epsilon(epsilon)
    _check_theta(theta)
    return epsilon * abs(theta) + (1 - epsilon) * HALF_PI


def angle_fraction(epsilon: float, theta: float) -> float:
    """|theta| / gamma(eps, theta), exactly 0 on the real axis."""
    return abs(theta) / gamma_eps(epsilon, theta)


def sector_decay(exponent: float, epsilon: float, theta: float) -> float:
    """Real-axis decay exponent transported to the ray arg z = theta."""
    return exponent * (1 - angle_fraction(epsilon, theta))


def effective_exponent(beta: float, d: int, sigma: float, epsilon: float, theta: float) -> float:
    """(beta - d/sigma)(1 - |theta|/gamma), the complex-time annulus decay rate."""
    base = beta - d * inverse(sigma)
    if base < 0:
        raise DomainError(f"beta={beta} is below d/sigma={d * inverse(sigma)}")
    return sector_decay(base, epsilon, theta)


def assumption_sector_bound(hyp: PolyBoundHypothesis, z: ComplexTime) -> float:
    """a1 (|z| cos theta)^(-beta1)."""
    return hyp.a1 * z.real_part ** (-hyp.beta1)


def assumption_real_bound(hyp: PolyBoundHypothesis, modulus: float) -> float:
    """a1 |z|^(-beta1) (a2/|z|)^(-beta2) (a3/|z|)^beta3 on the positive real axis."""
    if not modulus > 0:
        raise DomainError(f"modulus={modulus} must be positive")
    return (hyp.a1 * modulus ** (-hyp.beta1) * (hyp.a2 / modulus) ** (-hyp.beta2)
            * (hyp.a3 / modulus) ** hyp.beta3)


def bound_bracket(hyp: PolyBoundHypothesis, z: ComplexTime, epsilon: float) -> float:
    """min{1, eps^(-beta1) [(a2/|z|)^(-beta2) (a3/|z|)^beta3]^(1 - |theta|/gamma)}."""
    exponent = 1 - angle_fraction(epsilon, z.theta)
    log_inner = -hyp.beta2 * math.log(hyp.a2 / z.modulus) + hyp.beta3 * math.log(hyp.a3 / z.modulus)
    log_scale = -hyp.beta1 * math.log(epsilon) + exponent * log_inner
    if log_scale >= 0:
        return 1.0
    return math.exp(log_scale)


def pl_bound(hyp: PolyBoundHypothesis, z: ComplexTime, epsilon: float) -> float:
    """Interpolated bound on ||F(z)|| at z in the sector."""
    return assumption_sector_bound(hyp, z) * bound_bracket(hyp, z, epsilon)


def pl_bound_precise(hyp: PolyBoundHypothesis, z: ComplexTime, epsilon: float, dps: int = 50) -> mpmath.mpf:
    """Arbitrary-precision evaluation of the same closed formula."""
    _check_epsilon(epsilon)
    with mpmath.workdps(dps):
        modulus = mpmath.mpf(z.modulus)
        theta = mpmath.mpf(z.theta)
        eps = mpmath.mpf(epsilon)
        gamma = eps * abs(theta) + (1 - eps) * mpmath.pi / 2
        inner = (mpmath.mpf(hyp.a2) / modulus) ** (-mpmath.mpf(hyp.beta2)) \
            * (mpmath.mpf(hyp.a3) / modulus) ** mpmath.mpf(hyp.beta3)
        bracket = min(mpmath.mpf(1), eps ** (-mpmath.mpf(hyp.beta1)) * inner ** (1 - abs(theta) / gamma))
        return mpmath.mpf(hyp.a1) * (modulus * mpmath.cos(theta)) ** (-mpmath.mpf(hyp.beta1)) * bracket


def aux_h2(z: ComplexLike, a2: float, beta2: float, gamma: float) -> complex:
    """(a2 z)^(beta2 (1 + i log(a2 z) / (2 gamma))) on the principal branch."""
    _check_gamma(gamma)
    log_term = cmath.log(a2 * _as_complex(z))
    return cmath.exp(beta2 * log_term * (1 + 1j * log_term / (2 * gamma)))


def aux_h3(z: ComplexLike, a3: float, beta3: float, gamma: float) -> complex:
    """(a3 z)^(-beta3 (1 + i log(a3 z) / (2 gamma))) on the principal branch."""
    _check_gamma(gamma)
    log_term = cmath.log(a3 * _as_complex(z))
    return cmath.exp(-beta3 * log_term * (1 + 1j * log_term / (2 * gamma)))


def aux_g(witness: AnalyticWitness, z: ComplexLike, hyp: PolyBoundHypothesis, gamma: float) -> Any:
    """z^(-beta1) F(1/z) H2(z) H3(z)."""
    value = _as_complex(z)
    factor = cmath.exp(-hyp.beta1 * cmath.log(value)) \
        * aux_h2(value, hyp.a2, hyp.beta2, gamma) * aux_h3(value, hyp.a3, hyp.beta3, gamma)
    return factor * witness.evaluate(ComplexTime.from_complex(1 / value))


def _magnitude(witness: AnalyticWitness, value: Any) -> float:
    return float(witness.norm(value)) if witness.norm is not None else float(abs(value))


def three_lines_profile(witness: AnalyticWitness, hyp: PolyBoundHypothesis, gamma: float,
                        moduli: Sequence[float]) -> ThreeLinesReport:
    """Maxima of ||G|| on the two boundary rays of the sector {0 < arg z < gamma}."""
    _check_gamma(gamma)
    real_max = max(_magnitude(witness, aux_g(witness, s, hyp, gamma)) for s in moduli)
    ray_max = max(_magnitude(witness, aux_g(witness, cmath.rect(s, gamma), hyp, gamma)) for s in moduli)
    return ThreeLinesReport(
        real_ray_max=real_max,
        real_ray_limit=hyp.a1,
        gamma_ray_max=ray_max,
        gamma_ray_limit=hyp.a1 * math.cos(gamma) ** (-hyp.beta1),
    )


def canonical_witness(hyp: PolyBoundHypothesis) -> AnalyticWitness:
    """F(z) = a1 z^(-beta1) (1 + a2/z)^(-beta2) (1 + z/a3)^(-beta3), which meets both hypotheses."""
    def evaluate(z: ComplexTime) -> complex:
        value = z.value
        return hyp.a1 * cmath.exp(
            -hyp.beta1 * cmath.log(value)
            - hyp.beta2 * cmath.log(1 + hyp.a2 / value)
            - hyp.beta3 * cmath.log(1 + value / hyp.a3)
        )

    return AnalyticWitness(evaluator=evaluate, label=f"canonical(a1={hyp.a1:g}, beta1={hyp.beta1:g})")


def fit_real_axis_scale(witness: AnalyticWitness, a1: float, beta1: float, beta2: float,
                        moduli: Sequence[float]) -> float:
    """Largest a2 with ||F(s)|| <= a1 s^(-beta1) (a2/s)^(-beta2) at every sampled s."""
    if not beta2 > 0:
        raise DomainError("beta2 must be positive to fit a2")
    if not moduli:
        raise DomainError("no moduli to fit on")
    candidates = []
    for s in moduli:
        size = witness.magnitude(ComplexTime.real(s))
        if size > 0:
            candidates.append(s * (a1 * s ** (-beta1) / size) ** (1 / beta2))
    if not candidates:
        raise DomainError("witness vanishes on every sampled modulus")
    a2 = min(candidates)
    logger.debug(f"fitted a2={a2:.6g} for {witness.label} on {len(moduli)} moduli")
    return a2


def _certify_point(witness: AnalyticWitness, hyp: PolyBoundHypothesis, epsilon: float, tol: float,
                   z: ComplexTime) -> Tuple[float, bool]:
    size = witness.magnitude(z)
    ratio = size / pl_bound(hyp, z, epsilon)
    sector_ok = size <= assumption_sector_bound(hyp, z) * (1 + tol)
    real_ok = witness.magnitude(ComplexTime.real(z.modulus)) <= assumption_real_bound(hyp, z.modulus) * (1 + tol)
    return ratio, sector_ok and real_ok


def certify_pl(witness: AnalyticWitness, hyp: PolyBoundHypothesis, epsilon: float,
               samples: Sequence[ComplexTime], tol: float = 1e-9, jobs: int = 1) -> CertificationReport:
    """Empirical check of ||F(z)|| <= pl_bound(z) over the samples, hypotheses re-checked."""
    if not samples:
        raise DomainError("certification needs at least one sample")
    _check_epsilon(epsilon)

    def evaluate(z: ComplexTime) -> Tuple[float, bool]:
        return _certify_point(witness, hyp, epsilon, tol, z)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate, samples))
    else:
        results = [evaluate(z) for z in samples]

    ratios = [ratio for ratio, _ in results]
    worst = max(range(len(ratios)), key=ratios.__getitem__)
    violations = sum(1 for _, ok in results if not ok)
    max_ratio = ratios[worst]

    if violations:
        status = "HYPOTHESIS_VIOLATION"
        logger.warning(f"⚠️ {witness.label}: {violations} samples violate the boundary hypotheses")
    elif max_ratio <= 1 + tol:
        status = "PASS"
        logger.info(f"✅ {witness.label}: max ratio {max_ratio:.6g} over {len(samples)} samples")
    else:
        status = "BOUND_VIOLATION"
        logger.error(f"❌ {witness.label}: bound exceeded, ratio {max_ratio:.6g}")

    return CertificationReport(
        success=status == "PASS",
        message=f"{len(samples)} samples certified",
        error=None if status == "PASS" else status,
        witness=witness.label,
        max_ratio=max_ratio,
        worst_modulus=samples[worst].modulus,
        worst_theta=samples[worst].theta,
        sample_count=len(samples),
        hypothesis_violations=violations,
        status=status,
    )


class PLService:
    """Sector bounds and certificates for one hypothesis and one epsilon"""

    def __init__(self, hypothesis: Optional[PolyBoundHypothesis] = None, epsilon: Optional[float] = None,
                 tol: float = 1e-9, jobs: int = 1):
        if epsilon is not None:
            _check_epsilon(epsilon)
        self.hypothesis = hypothesis
        self.epsilon = epsilon
        self.tol = tol
        self.jobs = jobs
        if not self.is_configured():
            logger.warning("PL service has no hypothesis or epsilon yet")

    def is_configured(self) -> bool:
        """Check if a hypothesis and an epsilon are set"""
        return self.hypothesis is not None and self.epsilon is not None

    def _require(self) -> None:
        if not self.is_configured():
            raise ConfigError("the sector bound needs a hypothesis and epsilon")

    def bound(self, z: ComplexTime) -> float:
        self._require()
        return pl_bound(self.hypothesis, z, self.epsilon)

    def bounds(self, modulus: float, thetas: Sequence[float]) -> List[Dict[str, float]]:
        """Bound, opening angle gamma and bracket at |z| = modulus for each theta."""
        self._require()
        rows = []
        for theta in thetas:
            z = ComplexTime(modulus=modulus, theta=theta)
            rows.append({
                'theta': z.theta,
                'gamma': gamma_eps(self.epsilon, z.theta),
                'bracket': bound_bracket(self.hypothesis, z, self.epsilon),
                'bound': self.bound(z),
            })
        logger.info(f"📐 sector bound at |z|={modulus} for {len(rows)} angles")
        return rows

    def certify(self, samples: Sequence[ComplexTime], witness: Optional[AnalyticWitness] = None) -> CertificationReport:
        """Certify a witness (the canonical one by default) against the bound over the samples."""
        self._require()
        witness = canonical_witness(self.hypothesis) if witness is None else witness
        return certify_pl(witness, self.hypothesis, self.epsilon, samples, self.tol, self.jobs)
