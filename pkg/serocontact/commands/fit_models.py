import logging

import click

from serocontact.commands.common import (
    GlobalOptions,
    build_context,
    contact_estimates,
    custom_patterns_from,
    grid_from,
    load_demography,
    load_serology_input,
    load_survey_input,
)
from serocontact.errors import ConvergenceError, SeroContactError
from serocontact.foi_core import PiecewiseFoi, plotting_series
from serocontact.model_selection import (
    ModelFitSummary,
    akaike_table,
    fit_candidates,
    model_average_r0,
    required_filters,
    resolve_candidate,
)
from serocontact.report_utils import write_frame, write_json
from serocontact.schemas import FitModelsReport, ModelComparisonReport, ModelComparisonRow, ModelFitOut
from serocontact.transmission import r0_profile_interval
from serocontact.waifw_mixing import MixingPattern

logger = logging.getLogger(__name__)


def _failed_report(candidate, error: str) -> ModelFitOut:
    nan = float("nan")
    family = "mixing" if isinstance(candidate, MixingPattern) else candidate.family
    return ModelFitOut(model=candidate.name, family=family,
                       contact_filter=getattr(candidate, "contact_filter", None),
                       n_params=candidate.n_params, params={}, loglik=nan, aic=nan, bic=nan, r0=nan,
                       converged=False, error=error)


@click.command(
    "fit-models",
    short_help="Fit mixing patterns and proportionality models, rank by AIC",
)
@click.pass_obj
def command(options: GlobalOptions):
    """
    Fit every model in models.include and write the selection table.

    Outputs model_selection.csv (AIC, Akaike weight, evidence ratio, R0, BIC),
    models.json (fits and the model-averaged R0) and one series_<model>.csv
    per converged model.
    """
    ctx = build_context(options)
    config = ctx.config
    grid = grid_from(config)
    demography = load_demography(config)
    serology = load_serology_input(config)
    patterns = custom_patterns_from(config)
    candidates = [resolve_candidate(name, config.contacts.filter, config.models.split_age, patterns)
                  for name in config.models.include]

    filters = required_filters(candidates)
    rates = {}
    if filters:
        survey = load_survey_input(config, demography)
        rates = {f: est.rates for f, est in contact_estimates(config, survey, demography, filters).items()}

    outcomes = fit_candidates(candidates, serology, demography, grid, rates, jobs=ctx.jobs)
    reports, summaries = [], []
    for candidate, outcome in zip(candidates, outcomes):
        if not outcome.converged:
            reports.append(_failed_report(candidate, outcome.error))
            continue
        fit = outcome.fit
        if not isinstance(candidate, MixingPattern) and candidate.n_params == 1:
            try:
                fit.r0_interval = r0_profile_interval(fit, rates[candidate.contact_filter], serology,
                                                      demography, config.bootstrap.level)
            except SeroContactError as exc:
                logger.warning("model %s: no profile interval for R0: %s", candidate.name, exc.detail)
        reports.append(fit.to_report())
        summaries.append(ModelFitSummary.from_fit(fit))
        foi = PiecewiseFoi(grid, fit.lambdas, demography.maternal_antibody_age)
        write_frame(ctx.out / f"series_{candidate.name}.csv", plotting_series(foi, config.output.plot_step))

    if not summaries:
        raise ConvergenceError("no candidate model converged")

    table = akaike_table(summaries)
    averaged = model_average_r0(summaries)
    rows = [ModelComparisonRow(model=r.model, n_params=r.K, loglik=r.loglik, aic=r.AIC, delta=r.delta,
                               weight=r.weight, evidence_ratio=r.evidence_ratio, r0=r.R0, bic=r.BIC)
            for r in table.itertuples(index=False)]
    write_frame(ctx.out / "model_selection.csv", table)
    write_json(ctx.out / "models.json", FitModelsReport(
        contact_filter=config.contacts.filter, contact_source=config.contacts.source, fits=reports,
        comparison=ModelComparisonReport(rows=rows, averaged_r0=averaged),
    ))
    click.echo(table.to_string(index=False, float_format=lambda v: f"{v:.4g}"))
    click.echo(f"model-averaged R0: {averaged:.4f}")
