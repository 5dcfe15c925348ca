"""
Run configuration read from YAML.

Precedence is command-line flag > YAML value > SEROCONTACT_* environment > default.
The command layer applies flags on top of the object returned by ``load_run_config``.
"""
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from serocontact.errors import ConfigError

MODEL_NAMES = ("C1", "C2", "C3", "C4", "C5", "M1", "M2", "M3", "M4", "M5",
               "M6", "M7", "M8", "M9", "M10", "W1", "W2", "W3", "W4", "W5", "W6")
FILTER_NAMES = ("C1", "C2", "C3", "C4", "C5")
DEFAULT_CANDIDATES = ["C3", "M1", "M2", "M3", "M6", "M7", "M8"]


class _Section(BaseModel):
    model_config = {"extra": "forbid"}


class InputsConfig(_Section):
    serology: Optional[str] = Field(None, description="Path to serology.csv")
    participants: Optional[str] = Field(None, description="Path to participants.csv")
    contacts: Optional[str] = Field(None, description="Path to contacts.csv")
    census: Optional[str] = Field(None, description="Path to census.csv (age, household_size, count)")


class DemographyConfig(_Section):
    population_total: float = Field(9943749.0, gt=0, description="N, total population")
    life_expectancy: float = Field(80.0, gt=0, description="L, years")
    infectious_duration: float = Field(7.0 / 365.0, gt=0, lt=1, description="D, years")
    maternal_antibody_age: float = Field(0.5, ge=0, description="A, years")


class GridConfig(_Section):
    breakpoints: List[float] = Field([0.5, 2.0, 6.0, 12.0, 19.0, 31.0, 80.0],
                                     description="Age-class breakpoints of the transmission grid")

    @field_validator("breakpoints")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if len(value) < 2 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("breakpoints must be strictly increasing with at least two entries")
        return value


class ContactsConfig(_Section):
    filter: str = Field("C3", description="Contact definition C1..C5 used by the M models")
    source: str = Field("smooth", description="'smooth' (P-spline surface) or 'saturated'")
    upper_age: int = Field(101, gt=1, description="Upper edge of the one-year smoothing grid")

    @field_validator("filter")
    @classmethod
    def _filter(cls, value: str) -> str:
        if value not in FILTER_NAMES:
            raise ValueError(f"filter must be one of {', '.join(FILTER_NAMES)}")
        return value

    @field_validator("source")
    @classmethod
    def _source(cls, value: str) -> str:
        if value not in ("smooth", "saturated"):
            raise ValueError("source must be 'smooth' or 'saturated'")
        return value


class SmoothingConfig(_Section):
    n_basis: int = Field(11, ge=4, description="Cubic B-spline basis size per margin")
    difference_order: int = Field(2, ge=1, le=3, description="Difference penalty order")
    log10_lambda_grid: List[float] = Field([-1.0, 0.0, 1.0, 2.0, 3.0],
                                           description="Candidate log10 smoothing parameters")
    max_iter: int = Field(200, gt=0)
    tol: float = Field(1e-8, gt=0)


class ModelsConfig(_Section):
    include: List[str] = Field(list(DEFAULT_CANDIDATES), description="Models to fit: C1-C5, M1-M10, W1-W6 or a custom pattern")
    custom_patterns: Dict[str, str] = Field(default_factory=dict,
                                            description="Name -> CSV of a custom mixing-pattern index matrix")
    split_age: float = Field(12.0, gt=0, description="Age splitting the two q classes of M1-M5")

    @model_validator(mode="after")
    def _known(self) -> "ModelsConfig":
        if not self.include:
            raise ValueError("include must list at least one model")
        unknown = [v for v in self.include if v not in MODEL_NAMES and v not in self.custom_patterns]
        if unknown:
            raise ValueError(f"unknown model(s): {', '.join(unknown)}")
        return self


class BootstrapConfig(_Section):
    replicates: int = Field(1000, gt=0, description="B")
    seed: int = Field(20070101, ge=0, description="Master seed")
    level: float = Field(0.95, gt=0, lt=1)
    resample_serology: bool = True
    resample_contacts: bool = True
    jitter_ages: bool = True


class SimulateConfig(_Section):
    sample_size: int = Field(1000, gt=0, description="Subjects to draw")
    seed: int = Field(1, ge=0)
    constant_pi: Optional[float] = Field(None, description="Constant probability of immunity")
    foi: Optional[List[float]] = Field(None, description="Piecewise force of infection on grid.breakpoints")
    age_range: Tuple[float, float] = Field((1.0, 80.0), description="Ages [lo, hi) of simulated subjects")
    mode: str = Field("replace", description="'replace' writes a new dataset, 'augment' appends to inputs.serology")

    @field_validator("mode")
    @classmethod
    def _mode(cls, value: str) -> str:
        if value not in ("replace", "augment"):
            raise ValueError("mode must be 'replace' or 'augment'")
        return value


class OutputConfig(_Section):
    directory: Optional[str] = None
    plot_step: float = Field(0.1, gt=0, description="Age step of plotting series")


class RunConfig(_Section):
    inputs: InputsConfig = InputsConfig()
    demography: DemographyConfig = DemographyConfig()
    grid: GridConfig = GridConfig()
    contacts: ContactsConfig = ContactsConfig()
    smoothing: SmoothingConfig = SmoothingConfig()
    models: ModelsConfig = ModelsConfig()
    bootstrap: BootstrapConfig = BootstrapConfig()
    simulate: SimulateConfig = SimulateConfig()
    output: OutputConfig = OutputConfig()


def load_run_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """
    Parse a YAML run file into a RunConfig.

    Args:
        path: YAML file, or None for all defaults

    Returns:
        RunConfig: validated configuration

    Raises:
        ConfigError: If the file is missing, not valid YAML, or fails validation
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{path}: {where}: {first['msg']}")
