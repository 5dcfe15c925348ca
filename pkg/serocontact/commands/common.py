"""
Shared plumbing for the subcommands: option precedence, input loading and contact rates.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

from serocontact.contact_surface import ContactEstimate, estimate_contact_rates
from serocontact.core.config import RunConfig, load_run_config
from serocontact.core.settings import settings
from serocontact.data_model import (
    AgeGrid,
    ContactSurvey,
    Demography,
    SerologyDataset,
    compute_diary_weights,
    load_census,
    load_contact_survey,
    load_serology,
)
from serocontact.errors import ConfigError
from serocontact.report_utils import ensure_dir
from serocontact.spline_utils import SplineBasis
from serocontact.waifw_mixing import MixingPattern

logger = logging.getLogger(__name__)


@dataclass
class GlobalOptions:
    """Values of the group-level flags; None means not given."""
    config_path: Optional[str] = None
    seed: Optional[int] = None
    jobs: Optional[int] = None
    out: Optional[str] = None


@dataclass
class RunContext:
    config: RunConfig
    seed: Optional[int]
    jobs: int
    out: Path


def build_context(options: GlobalOptions) -> RunContext:
    """Apply flag > YAML > environment > default precedence and create the output directory."""
    config = load_run_config(options.config_path)
    out = options.out or config.output.directory or settings.OUTPUT_DIR
    jobs = options.jobs or settings.JOBS
    return RunContext(config=config, seed=options.seed, jobs=max(int(jobs), 1), out=ensure_dir(out))


def require_input(config: RunConfig, key: str) -> Path:
    value = getattr(config.inputs, key)
    if not value:
        raise ConfigError(f"inputs.{key} is not set")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"inputs.{key}: file not found: {path}")
    return path


def grid_from(config: RunConfig) -> AgeGrid:
    return AgeGrid(config.grid.breakpoints)


def basis_from(config: RunConfig) -> SplineBasis:
    return SplineBasis(n_basis=config.smoothing.n_basis, diff_order=config.smoothing.difference_order,
                       upper=float(config.contacts.upper_age))


def load_demography(config: RunConfig) -> Demography:
    """Census-based demography when ``inputs.census`` is set, the stationary population otherwise."""
    demo = config.demography
    if config.inputs.census:
        census = load_census(require_input(config, "census"))
        return Demography.from_census(census, demo.life_expectancy, demo.infectious_duration,
                                      demo.maternal_antibody_age)
    return Demography.uniform(demo.population_total, demo.life_expectancy, demo.infectious_duration,
                              demo.maternal_antibody_age, upper_age=config.contacts.upper_age)


def load_serology_input(config: RunConfig) -> SerologyDataset:
    return load_serology(require_input(config, "serology"), config.demography.maternal_antibody_age,
                         config.demography.life_expectancy)


def load_survey_input(config: RunConfig, demography: Demography) -> ContactSurvey:
    """Contact survey with diary weights post-stratified to the demography."""
    survey = load_contact_survey(require_input(config, "participants"), require_input(config, "contacts"))
    return compute_diary_weights(survey, demography)


def custom_patterns_from(config: RunConfig) -> Dict[str, MixingPattern]:
    patterns = {}
    for name, path in config.models.custom_patterns.items():
        if not Path(path).is_file():
            raise ConfigError(f"models.custom_patterns.{name}: file not found: {path}")
        patterns[name] = MixingPattern.from_csv(path, name)
    return patterns


def contact_estimates(config: RunConfig, survey: ContactSurvey, demography: Demography,
                      filters: Sequence[str]) -> Dict[str, ContactEstimate]:
    """Point estimates of the contact rates for each filter, with the configured source."""
    estimates = {}
    for contact_filter in filters:
        estimates[contact_filter] = estimate_contact_rates(
            survey, demography, grid_from(config), contact_filter, config.contacts.source,
            basis_from(config), config.smoothing.log10_lambda_grid, upper_age=config.contacts.upper_age,
            max_iter=config.smoothing.max_iter, tol=config.smoothing.tol,
        )
    return estimates
