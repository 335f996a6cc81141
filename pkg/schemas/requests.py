"""
Request schemas: validated inputs for every lab service
"""
import cmath
import math
import re
from typing import Any, Callable, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

EPSILON_MIN = 1e-6
HALF_PI = math.pi / 2

_ANGLE_RE = re.compile(r"^\s*([+-]?)\s*(\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d+)?))?\s*$", re.IGNORECASE)
_INFINITY_WORDS = {"inf", "+inf", "infinity", "∞"}


def parse_angle(value: Any) -> float:
    """Accept plain numbers and expressions such as 'pi/3' or '-2*pi/5'."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    match = _ANGLE_RE.match(text)
    if match:
        sign, factor, divisor = match.groups()
        angle = (float(factor) if factor not in ("", ".") else 1.0) * math.pi
        if divisor:
            angle /= float(divisor)
        return -angle if sign == "-" else angle
    return float(text)


def parse_extended_real(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in _INFINITY_WORDS:
        return math.inf
    return value


def conjugate_exponent(p: float) -> float:
    """Hoelder conjugate p' with 1/p + 1/p' = 1."""
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def inverse(p: float) -> float:
    return 0.0 if math.isinf(p) else 1.0 / p


class ComplexTime(BaseModel):
    """A point z = |z| e^{i theta} of the open right half-plane."""
    model_config = ConfigDict(frozen=True)

    modulus: float = Field(..., gt=0, description="|z|, abstract time unit")
    theta: float = Field(0.0, description="Argument of z in radians, |theta| < pi/2")

    @field_validator('theta', mode='before')
    @classmethod
    def validate_theta(cls, v):
        v = parse_angle(v)
        if not math.isfinite(v) or not abs(v) < HALF_PI:
            raise ValueError('theta must satisfy |theta| < pi/2')
        return v

    @model_validator(mode='after')
    def validate_half_plane(self):
        if not math.isfinite(self.modulus) or not self.modulus * math.cos(self.theta) > 0:
            raise ValueError('z must lie in the open right half-plane')
        return self

    @classmethod
    def from_complex(cls, z: complex) -> "ComplexTime":
        modulus, theta = cmath.polar(complex(z))
        return cls(modulus=modulus, theta=theta)

    @classmethod
    def real(cls, t: float) -> "ComplexTime":
        return cls(modulus=t, theta=0.0)

    @property
    def value(self) -> complex:
        if self.theta == 0.0:
            return complex(self.modulus, 0.0)
        return cmath.rect(self.modulus, self.theta)

    @property
    def real_part(self) -> float:
        return self.modulus * math.cos(self.theta)

    @property
    def is_real(self) -> bool:
        return self.theta == 0.0

    def conjugate(self) -> "ComplexTime":
        return ComplexTime(modulus=self.modulus, theta=-self.theta)

    def scaled(self, factor: float) -> "ComplexTime":
        return ComplexTime(modulus=self.modulus * factor, theta=self.theta)

    def __add__(self, other: "ComplexTime") -> "ComplexTime":
        return ComplexTime.from_complex(self.value + other.value)


class PolyBoundHypothesis(BaseModel):
    """Boundary data (a1, a2, a3, beta1, beta2, beta3) of the sector interpolation bound."""
    model_config = ConfigDict(frozen=True)

    a1: float = Field(..., gt=0, description="Sector bound constant")
    a2: float = Field(..., gt=0, description="Real-axis decay scale")
    a3: float = Field(..., gt=0, description="Real-axis growth scale")
    beta1: float = Field(..., ge=0, description="Sector bound exponent")
    beta2: float = Field(0.0, ge=0, description="Real-axis decay exponent")
    beta3: float = Field(0.0, ge=0, description="Real-axis growth exponent")


class AnalyticWitness(BaseModel):
    """A holomorphic F on the right half-plane, sampled through its evaluator."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    evaluator: Callable[[ComplexTime], Any] = Field(..., description="z -> F(z)")
    label: str = Field(..., min_length=1, description="Human readable name")
    norm: Optional[Callable[[Any], float]] = Field(None, description="Norm accessor for vector values")

    def evaluate(self, z: ComplexTime) -> Any:
        return self.evaluator(z)

    def magnitude(self, z: ComplexTime) -> float:
        value = self.evaluator(z)
        if self.norm is not None:
            return float(self.norm(value))
        return float(abs(value))


class KernelQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(..., gt=0, description="Order of the fractional Laplacian")
    d: int = Field(..., ge=1, description="Space dimension")
    z: ComplexTime = Field(..., description="Complex time")
    r: float = Field(0.0, ge=0, description="Spatial distance |x|")

    @property
    def scaled_distance(self) -> float:
        return self.r / self.z.modulus ** (1.0 / self.alpha)


class QuadratureSpec(BaseModel):
    """Tolerances and envelope of the radial Fourier inversion."""
    model_config = ConfigDict(frozen=True)

    truncation_tol: float = Field(1e-16, gt=0, lt=1, description="Relative size of the truncated tail")
    panel_tol: float = Field(1e-12, gt=0, lt=1, description="Absolute tolerance relative to the origin value")
    max_panels: int = Field(20000, ge=1, description="Refinement budget")
    nodes_per_panel: int = Field(20, ge=4, le=200, description="Gauss-Legendre nodes of the coarse rule")
    max_scaled_distance: float = Field(50.0, gt=0, description="Envelope on r/|z|^(1/alpha)")
    max_angle: float = Field(1.45, gt=0, lt=HALF_PI, description="Envelope on |theta|")


class GridSpec(BaseModel):
    """Periodic grid of n points per axis on the torus [-L/2, L/2)^d."""
    model_config = ConfigDict(frozen=True)

    d: int = Field(..., ge=1, le=3, description="Space dimension")
    n: int = Field(..., ge=2, description="Points per axis (even)")
    box_length: float = Field(..., gt=0, description="Torus side L")
    node_cap: int = Field(4096, ge=1, description="Largest admissible n^d")

    @field_validator('n')
    @classmethod
    def validate_even(cls, v):
        if v % 2:
            raise ValueError('n must be even')
        return v

    @model_validator(mode='after')
    def validate_cap(self):
        if self.n ** self.d > self.node_cap:
            raise ValueError(f'grid has {self.n ** self.d} nodes, cap is {self.node_cap}')
        return self

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    @property
    def n_nodes(self) -> int:
        return self.n ** self.d

    @property
    def weight(self) -> float:
        return self.spacing ** self.d

    @property
    def center_index(self) -> int:
        """Flat index of the node at the origin."""
        half = self.n // 2
        return sum(half * self.n ** axis for axis in range(self.d))


class PotentialSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal['zero', 'bounded_sample', 'hardy'] = Field('zero', description="Potential family")
    values: Optional[List[float]] = Field(None, description="Samples on the grid (bounded_sample)")
    amplitude: Optional[float] = Field(None, description="Gaussian bump height (bounded_sample)")
    width: Optional[float] = Field(None, gt=0, description="Gaussian bump width (bounded_sample)")
    a: Optional[float] = Field(None, description="Hardy coupling")
    cutoff: Optional[float] = Field(None, gt=0, description="Hardy regularization radius, defaults to h")

    @model_validator(mode='after')
    def validate_kind(self):
        if self.kind == 'bounded_sample':
            if self.values is None and (self.amplitude is None or self.width is None):
                raise ValueError('bounded_sample needs values or amplitude and width')
            if self.values is not None and not all(math.isfinite(v) for v in self.values):
                raise ValueError('bounded_sample values must be finite')
        if self.kind == 'hardy' and self.a is None:
            raise ValueError('hardy potential needs the coupling a')
        return self

    @property
    def is_nonnegative(self) -> bool:
        if self.kind == 'zero':
            return True
        if self.kind == 'hardy':
            return self.a >= 0
        if self.values is not None:
            return min(self.values) >= 0
        return self.amplitude >= 0


class DGParams(BaseModel):
    """Exponents (p, q, sigma, beta) of a dyadic Davies-Gaffney estimate."""
    model_config = ConfigDict(frozen=True)

    d: int = Field(..., ge=1, description="Space dimension")
    p: float = Field(..., ge=1, description="Source exponent, may be inf")
    q: float = Field(..., ge=1, description="Target exponent, may be inf")
    sigma: float = Field(..., gt=0, description="Volume exponent; inf means d/sigma = 0")
    beta: float = Field(..., gt=0, description="Decay exponent of g(l) = (1+l)^(-beta)")
    variant: Literal['plain', 'restricted', 'dual', 'relaxed'] = Field('plain', description="Estimate family")

    @field_validator('p', 'q', 'sigma', mode='before')
    @classmethod
    def validate_extended(cls, v):
        return parse_extended_real(v)

    @model_validator(mode='after')
    def validate_constraint(self):
        if self.p > self.q:
            raise ValueError('p must not exceed q')
        if self.variant == 'plain' and not self.beta > self.d_over_sigma + self.d * inverse(self.q):
            raise ValueError('plain estimate needs beta > d(1/sigma + 1/q)')
        if self.variant == 'relaxed' and not self.beta > self.d_over_sigma:
            raise ValueError('relaxed estimate needs beta > d/sigma')
        if self.variant == 'restricted' and not self.beta > self.d * inverse(self.p) + self.d_over_sigma:
            raise ValueError('restricted estimate needs beta > d(1/p + 1/sigma)')
        if self.variant == 'dual':
            if not 1 <= self.p <= 2:
                raise ValueError('dual estimate needs p in [1, 2]')
            if not math.isclose(self.q, conjugate_exponent(self.p)):
                raise ValueError("dual estimate needs q = p'")
            if not self.beta > self.d * (0.5 + inverse(self.q)):
                raise ValueError("dual estimate needs beta > d(1/2 + 1/p')")
        return self

    @property
    def d_over_sigma(self) -> float:
        return self.d * inverse(self.sigma)

    @property
    def smoothing(self) -> float:
        """1/p - 1/q."""
        return inverse(self.p) - inverse(self.q)

    @property
    def decay(self) -> float:
        """beta - d/sigma."""
        return self.beta - self.d_over_sigma


class DyadicAnnulus(BaseModel):
    model_config = ConfigDict(frozen=True)

    center: int = Field(..., ge=0, description="Flat grid index of x")
    base_radius: float = Field(..., gt=0, description="r")
    index: int = Field(..., ge=0, description="k; 0 is the ball B_x(r)")

    @property
    def inner_radius(self) -> float:
        return 0.0 if self.index == 0 else 2.0 ** (self.index - 1) * self.base_radius

    @property
    def outer_radius(self) -> float:
        return 2.0 ** self.index * self.base_radius


class Tolerances(BaseModel):
    slope_tol: float = Field(0.1, gt=0, description="log2 slope tolerance for profiles")
    theorem_slope_tol: float = Field(0.15, gt=0, description="log2 slope tolerance for complex-time decay")
    constant_spread: float = Field(2.0, gt=1, description="Allowed max/min of fitted constants over a sweep")
    oracle_rtol: float = Field(1e-3, gt=0, description="Grid versus closed-form agreement")
    norm_gap: float = Field(3.0, gt=1, description="upper/lower ratio that flags an uncertain norm")
    pl_tol: float = Field(1e-9, gt=0, description="Relative slack of interpolation certificates")


SUITES = ('cor_plapplied', 'cor_plapplied2', 'thm_plgge', 'cor_plggecor', 'cor_lp_complex')


class ExperimentConfig(BaseModel):
    """One verification experiment, as read from a config file."""
    model_config = ConfigDict(frozen=True)

    experiment_id: str = Field(..., min_length=1, description="Report file stem")
    suite: Literal['cor_plapplied', 'cor_plapplied2', 'thm_plgge', 'cor_plggecor', 'cor_lp_complex']
    alpha: float = Field(..., gt=0, lt=2, description="Order of the fractional Laplacian")
    d: int = Field(..., ge=1, le=3, description="Space dimension")
    grid: GridSpec
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    thetas: List[float] = Field(..., min_length=1, description="Angles in radians")
    moduli: List[float] = Field(..., min_length=1, description="|z| values")
    radii: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
                               description="Distances in units of |z|^(1/alpha)")
    zetas: Optional[List[float]] = Field(None, description="Radius exponents; default {0, (alpha-1)/alpha v 0, 1}")
    epsilon: float = Field(0.5, description="Interpolation parameter")
    p: Optional[float] = None
    q: Optional[float] = None
    sigma: Optional[float] = None
    beta: Optional[float] = None
    kmax: int = Field(6, ge=2, le=16, description="Largest annulus index")
    slope_from_k: int = Field(2, ge=1, description="First annulus of the slope regression")
    slope_window: Optional[List[float]] = Field(None, min_length=2, max_length=2,
                                                description="Scaled distance window of the theta=0 slope")
    center: Optional[int] = Field(None, ge=0, description="Profile center node, defaults to the origin")
    output_dir: Optional[str] = None
    seed: int = Field(0, ge=0)
    jobs: int = Field(1, ge=1)
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @field_validator('thetas', mode='before')
    @classmethod
    def validate_thetas(cls, v):
        v = [parse_angle(item) for item in v]
        for theta in v:
            if not abs(theta) < HALF_PI:
                raise ValueError('every theta must satisfy |theta| < pi/2')
        return v

    @field_validator('p', 'q', 'sigma', mode='before')
    @classmethod
    def validate_extended(cls, v):
        return parse_extended_real(v)

    @field_validator('moduli')
    @classmethod
    def validate_moduli(cls, v):
        if any(not m > 0 for m in v):
            raise ValueError('moduli must be positive')
        return v

    @field_validator('radii')
    @classmethod
    def validate_radii(cls, v):
        if any(r < 0 for r in v):
            raise ValueError('radii must be nonnegative')
        return v

    @field_validator('epsilon')
    @classmethod
    def validate_epsilon(cls, v):
        if not EPSILON_MIN < v < 1 - EPSILON_MIN:
            raise ValueError(f'epsilon must lie in ({EPSILON_MIN}, {1 - EPSILON_MIN})')
        return v

    @model_validator(mode='after')
    def validate_experiment(self):
        if self.grid.d != self.d:
            raise ValueError('grid.d must equal d')
        if self.potential.kind == 'hardy' and not self.alpha < min(2, self.d):
            raise ValueError('hardy potential needs alpha < min(2, d)')
        if self.potential.values is not None and len(self.potential.values) != self.grid.n_nodes:
            raise ValueError('potential.values must have one entry per grid node')
        if self.center is not None and self.center >= self.grid.n_nodes:
            raise ValueError('center is not a grid node')
        limit = self.grid.box_length / 8
        for modulus in self.moduli:
            if modulus ** (1.0 / self.alpha) > limit:
                raise ValueError(f'|z|^(1/alpha) = {modulus ** (1.0 / self.alpha):.4g} exceeds L/8 = {limit:.4g}')
        if self.suite in ('thm_plgge', 'cor_plggecor', 'cor_lp_complex'):
            self.dg_params()
        return self

    @property
    def zeta_values(self) -> List[float]:
        if self.zetas is not None:
            return list(self.zetas)
        values = []
        for zeta in (0.0, max((self.alpha - 1.0) / self.alpha, 0.0), 1.0):
            if zeta not in values:
                values.append(zeta)
        return values

    @property
    def center_node(self) -> int:
        return self.grid.center_index if self.center is None else self.center

    def dg_params(self) -> DGParams:
        """Real-time estimate parameters assumed by the suite."""
        if self.p is None or self.beta is None:
            raise ValueError(f'suite {self.suite} needs p and beta')
        if self.suite == 'thm_plgge':
            if self.q is None or self.sigma is None:
                raise ValueError('thm_plgge needs q and sigma')
            return DGParams(d=self.d, p=self.p, q=self.q, sigma=self.sigma, beta=self.beta, variant='plain')
        p_dual = conjugate_exponent(self.p)
        if self.suite == 'cor_plggecor':
            return DGParams(d=self.d, p=self.p, q=p_dual, sigma=p_dual, beta=self.beta, variant='dual')
        return DGParams(d=self.d, p=self.p, q=2.0, sigma=p_dual, beta=self.beta, variant='restricted')
