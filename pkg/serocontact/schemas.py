from typing import Dict, List, Optional

from pydantic import BaseModel, Field


# Force of infection
class FoiClassOut(BaseModel):
    lower: float = Field(..., description="Lower breakpoint of the age class")
    upper: float = Field(..., description="Upper breakpoint of the age class")
    foi: float = Field(..., description="Estimated force of infection (per year)")
    coverage: str = Field(..., description="observed, no_observations or beyond_data")
    at_zero: bool = Field(..., description="Estimate sits on the lower boundary")


class FoiReport(BaseModel):
    n_subjects: int = Field(..., description="Subjects used in the fit")
    n_excluded: int = Field(..., description="Subjects excluded by the age window")
    loglik: float = Field(..., description="Binomial log-likelihood at the optimum")
    converged: bool
    clamp_events: int = Field(0, description="Probabilities clamped away from 0 or 1")
    classes: List[FoiClassOut]


# Contact surface
class SurfaceReport(BaseModel):
    filter: str = Field(..., description="Contact definition C1..C5")
    source: str = Field("smooth", description="smooth or saturated")
    n_participants: int
    n_contacts: int
    lambda_row: Optional[float] = Field(None, description="Penalty on the participant-age margin")
    lambda_col: Optional[float] = Field(None, description="Penalty on the contact-age margin")
    dispersion: float = Field(..., description="Negative binomial size parameter k")
    dispersion_capped: bool = False
    edf: float = Field(..., description="Effective degrees of freedom")
    deviance: float
    loglik: float
    aic: float
    gradient_norm: Optional[float] = None
    iterations: int = 0


# Model fits
class ModelFitOut(BaseModel):
    model: str = Field(..., description="Model name, e.g. W1, C3 or M7")
    family: str = Field(..., description="mixing, constant, discrete or loglinear")
    contact_filter: Optional[str] = None
    n_params: int
    params: Dict[str, float] = Field(..., description="Maximum likelihood estimates")
    loglik: float
    aic: float
    bic: float
    r0: float
    r0_lower: Optional[float] = Field(None, description="Profile likelihood lower bound (one-parameter models)")
    r0_upper: Optional[float] = None
    r0_ci_one_sided: bool = False
    converged: bool = True
    flags: List[str] = Field(default_factory=list, description="weakly_identified, fixed_point_failures, ...")
    error: Optional[str] = Field(None, description="Set when the fit failed")


class ModelComparisonRow(BaseModel):
    model: str
    n_params: int
    loglik: float
    aic: float
    delta: float
    weight: float
    evidence_ratio: float
    r0: float
    bic: float


class ModelComparisonReport(BaseModel):
    rows: List[ModelComparisonRow]
    averaged_r0: Optional[float] = Field(None, description="Akaike-weighted R0")


class FitModelsReport(BaseModel):
    contact_filter: str = Field(..., description="Contact definition used by the M models")
    contact_source: str = Field(..., description="smooth or saturated contact rates")
    fits: List[ModelFitOut]
    comparison: ModelComparisonReport


# Bootstrap
class IntervalOut(BaseModel):
    estimate: Optional[float] = None
    lower: float
    upper: float


class BootstrapModelOut(BaseModel):
    model: str
    n_converged: int
    r0: IntervalOut
    params: Dict[str, IntervalOut] = Field(default_factory=dict)


class BootstrapFailureOut(BaseModel):
    replicate: int
    model: Optional[str] = None
    reason: str


class BootstrapReport(BaseModel):
    replicates: int
    seed: int
    level: float
    n_converged: int = Field(..., description="Replicates in which at least one model converged")
    models: List[BootstrapModelOut]
    averaged_r0: Optional[IntervalOut] = None
    failures: List[BootstrapFailureOut] = Field(default_factory=list)


# Simulation
class SimulationReport(BaseModel):
    mode: str
    sample_size: int = Field(..., description="Simulated subjects")
    n_records: int = Field(..., description="Records in the written dataset")
    seed: int
    prevalence: float = Field(..., description="Fraction of simulated subjects with status 1")
