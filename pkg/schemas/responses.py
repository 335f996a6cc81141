"""
Response schemas for lab reports
"""
import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from schemas.requests import ComplexTime, GridSpec, PotentialSpec


class BaseResponse(BaseModel):
    success: bool = Field(..., description="Overall success status")
    message: Optional[str] = Field(None, description="Summary message")
    error: Optional[str] = Field(None, description="Error message if failed")


class KernelValue(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: complex = Field(..., description="Kernel density, units length^-d")
    abs_err: float = Field(..., ge=0, description="Estimated absolute error")
    panels: int = Field(0, ge=0, description="Quadrature panels used")


class CertificationReport(BaseResponse):
    witness: str = Field(..., description="Witness label")
    max_ratio: float = Field(..., description="max ||F(z)|| / bound over the samples")
    worst_modulus: float = Field(..., description="|z| of the worst sample")
    worst_theta: float = Field(..., description="theta of the worst sample")
    sample_count: int = Field(..., ge=1)
    hypothesis_violations: int = Field(0, ge=0, description="Samples violating a boundary hypothesis")
    status: str = Field(..., description="PASS, BOUND_VIOLATION or HYPOTHESIS_VIOLATION")


class ThreeLinesReport(BaseModel):
    real_ray_max: float = Field(..., description="max |G| on the positive real axis")
    real_ray_limit: float = Field(..., description="a1")
    gamma_ray_max: float = Field(..., description="max |G| on the ray arg z = gamma")
    gamma_ray_limit: float = Field(..., description="a1 (cos gamma)^(-beta1)")

    @property
    def holds(self) -> bool:
        return self.real_ray_max <= self.real_ray_limit * (1 + 1e-9) and \
            self.gamma_ray_max <= self.gamma_ray_limit * (1 + 1e-9)


class BGFit(BaseModel):
    constant: float = Field(..., description="sup of |kernel| / envelope on the grid")
    refined_constant: float = Field(..., description="Same sup on the refined grid")
    relative_change: float = Field(..., ge=0)
    stable: bool
    worst_t: float
    worst_r: float


class NormEstimate(BaseModel):
    """Certified interval for a p->q operator norm."""
    model_config = ConfigDict(frozen=True)

    lower: float = Field(..., ge=0)
    upper: float = Field(..., ge=0)
    exact: bool = Field(False, description="True on the exactly computable corners")
    uncertain: bool = Field(False, description="upper/lower exceeds the allowed gap")

    @property
    def value(self) -> float:
        return self.upper

    @property
    def gap(self) -> float:
        if self.lower == 0:
            return 1.0 if self.upper == 0 else math.inf
        return self.upper / self.lower


class AnnulusNorm(BaseModel):
    k: int = Field(..., ge=0)
    norm: NormEstimate
    normalizer: float = Field(..., description="Reference profile value at k")
    ratio: float = Field(..., description="norm.upper / normalizer")
    nodes: int = Field(..., ge=0, description="Nodes in the annulus")
    in_regression: bool = False


class DGReport(BaseModel):
    per_k_norms: List[AnnulusNorm] = Field(default_factory=list)
    fitted_CDG: float = Field(..., ge=0)
    fitted_slope: float = Field(..., description="log2 decay rate, -inf when the tail vanishes")
    expected_slope: float = Field(..., description="-(beta - d/sigma)")
    slope_tol: float
    uncertain_norms: int = Field(0, ge=0)
    passed: bool = Field(..., description="C_DG finite and slope within tolerance")

    def rows(self) -> List[Dict[str, Any]]:
        """Flat record, one row per k."""
        return [
            {
                "k": item.k,
                "lower": item.norm.lower,
                "upper": item.norm.upper,
                "exact": item.norm.exact,
                "normalizer": item.normalizer,
                "ratio": item.ratio,
                "nodes": item.nodes,
                "in_regression": item.in_regression,
            }
            for item in self.per_k_norms
        ]


class PointwiseEquivalenceReport(BaseModel):
    c_dg: float = Field(..., ge=0, description="Annulus constant")
    c_pointwise: float = Field(..., ge=0, description="Measured pointwise envelope constant")
    derived_pointwise: float = Field(..., ge=0, description="Pointwise constant implied by c_dg")
    derived_annulus: float = Field(..., ge=0, description="Annulus constant implied by c_pointwise")
    constant_a: float = Field(..., description="derived_pointwise / c_pointwise")
    constant_b: float = Field(..., description="derived_annulus / c_dg")
    direction_a: bool
    direction_b: bool
    violation: Optional[Tuple[int, int]] = Field(None, description="Worst (x, y) breaking direction (a)")

    @property
    def passed(self) -> bool:
        return self.direction_a and self.direction_b


class RadiusCheck(BaseModel):
    r: float
    measured: NormEstimate
    reference: float
    ratio: float


class HypercontractiveReport(BaseModel):
    per_radius: List[RadiusCheck] = Field(default_factory=list)
    spread: float = Field(..., description="max/min of the ratios")
    duality_checks: List[Dict[str, float]] = Field(default_factory=list)
    duality_consistent: bool = True
    passed: bool


class TwoRadiusReport(BaseModel):
    constants: Dict[str, float] = Field(default_factory=dict, description="Fitted constant per r0/r")
    improved_constants: Dict[str, float] = Field(default_factory=dict, description="k in {0,1} without volume")
    relaxed_regime: bool = Field(False, description="beta <= d(1/sigma + 1/q) but beta > d/sigma")
    profile_constant: float = Field(..., ge=0, description="C_DG of the annulus profile at r0 = r")
    reference_constant: float = Field(..., ge=0, description="Constant the two-radius constants are held to")
    agreement: float = Field(..., description="max/min of the r0 = r two-radius constant and profile_constant")
    spread: float
    passed: bool


class DualReport(BaseModel):
    constants_2_to_pdual: Dict[str, float] = Field(default_factory=dict)
    constants_p_to_2: Dict[str, float] = Field(default_factory=dict)
    slopes_2_to_pdual: Dict[str, float] = Field(default_factory=dict)
    slopes_p_to_2: Dict[str, float] = Field(default_factory=dict)
    spread: float
    passed: bool


class LpBoundedReport(BaseModel):
    profile_constants: Dict[str, float] = Field(default_factory=dict)
    operator_norms: Dict[str, float] = Field(default_factory=dict)
    c_dg: float = Field(..., gt=0, description="Constant both families are held to")
    limit: float = Field(..., description="slack * c_dg")
    spread: float
    passed: bool


def frozen_array(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class DiscreteOperator(BaseModel):
    """Spectral decomposition of (-Delta)^{alpha/2} + V on a periodic grid."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: GridSpec
    alpha: float = Field(..., gt=0)
    potential: PotentialSpec
    eigenvalues: np.ndarray = Field(..., description="Ascending, read-only")
    eigenvectors: np.ndarray = Field(..., description="Orthonormal columns in plain l2, read-only")
    weight: float = Field(..., gt=0, description="h^d per node")
    cutoff: Optional[float] = Field(None, description="Hardy regularization radius in use")

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


class KernelMatrix(BaseModel):
    """K[i, j] ~ e^{-zH}(x_i, x_j), acting as (e^{-zH} f)(x_i) = sum_j K[i, j] f(x_j) h^d."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray = Field(..., description="Complex N x N matrix, read-only")
    z: ComplexTime
    grid: GridSpec
    weight: float = Field(..., gt=0)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.values @ f * self.weight

    def transpose(self) -> "KernelMatrix":
        return self.model_copy(update={"values": frozen_array(self.values.T.copy())})

    def conjugate(self) -> "KernelMatrix":
        return self.model_copy(update={"values": frozen_array(self.values.conj()), "z": self.z.conjugate()})


class OperatorDiagnostics(BaseModel):
    cutoff: float
    lambda_min: float
    origin_diagonal: float


class VerificationRow(BaseModel):
    experiment_id: str
    parameters: Dict[str, float] = Field(default_factory=dict, description="Ordered parameter tuple")
    lhs: float
    rhs: float
    ratio: float
    status: str = Field(..., description="PASS, FAIL, SKIP or ERROR")
    note: str = ""

    @property
    def passed(self) -> Optional[bool]:
        if self.status in ("SKIP",):
            return None
        return self.status == "PASS"


class ExperimentSummary(BaseResponse):
    experiment_id: str
    suite: str
    pass_count: int = 0
    fail_count: int = 0
    skip_count: int = 0
    error_count: int = 0
    fitted_constants: Dict[str, float] = Field(default_factory=dict)
    slopes: Dict[str, float] = Field(default_factory=dict)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    environment: Dict[str, str] = Field(default_factory=dict)


class SuiteResult(BaseModel):
    """Rows of one verification suite plus the constants and slopes fitted along the way."""
    rows: List[VerificationRow] = Field(default_factory=list)
    fitted_constants: Dict[str, float] = Field(default_factory=dict)
    slopes: Dict[str, float] = Field(default_factory=dict)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
