import logging
import sys
from dataclasses import replace

import click
import numpy as np

from serocontact.bootstrap import (
    BootstrapSpec,
    parameter_table,
    q_curve_table,
    replicate_table,
    run_bootstrap,
    summarize_bootstrap,
)
from serocontact.commands.common import (
    GlobalOptions,
    basis_from,
    build_context,
    contact_estimates,
    custom_patterns_from,
    grid_from,
    load_demography,
    load_serology_input,
    load_survey_input,
)
from serocontact.model_selection import ModelFitSummary, fit_candidates, model_average_r0, required_filters
from serocontact.report_utils import write_frame, write_json

logger = logging.getLogger(__name__)


@click.command(
    "bootstrap",
    short_help="Percentile intervals by resampling contacts and serology",
)
@click.pass_obj
def command(options: GlobalOptions):
    """
    Bootstrap every model in models.include.

    The smoothing parameters chosen on the full survey are reused in every
    replicate. Writes bootstrap_replicates.csv, bootstrap_params.csv,
    bootstrap_q_curves.csv (loglinear models) and bootstrap_summary.json.
    """
    ctx = build_context(options)
    config = ctx.config
    boot = config.bootstrap
    grid = grid_from(config)
    demography = load_demography(config)
    serology = load_serology_input(config)

    spec = BootstrapSpec(
        replicates=boot.replicates, seed=boot.seed if ctx.seed is None else ctx.seed, level=boot.level,
        models=tuple(config.models.include), contact_filter=config.contacts.filter,
        split_age=config.models.split_age, grid=grid, contact_source=config.contacts.source,
        basis=basis_from(config), log10_lambdas=tuple(config.smoothing.log10_lambda_grid),
        upper_age=config.contacts.upper_age, custom_patterns=custom_patterns_from(config),
        resample_serology=boot.resample_serology, resample_contacts=boot.resample_contacts,
        jitter_ages=boot.jitter_ages, max_iter=config.smoothing.max_iter, tol=config.smoothing.tol,
    )
    candidates = spec.candidates()
    filters = required_filters(candidates)
    survey, rates, lambdas = None, {}, {}
    if filters:
        survey = load_survey_input(config, demography)
        for contact_filter, estimate in contact_estimates(config, survey, demography, filters).items():
            rates[contact_filter] = estimate.rates
            if estimate.surface is not None:
                lambdas[contact_filter] = (estimate.surface.lambda_rows, estimate.surface.lambda_cols)
        spec = replace(spec, lambdas=lambdas)

    point = {}
    outcomes = fit_candidates(candidates, serology, demography, grid, rates, jobs=ctx.jobs)
    summaries = [ModelFitSummary.from_fit(o.fit) for o in outcomes if o.converged]
    for summary in summaries:
        point[summary.model] = summary.r0
    if len(summaries) == len(candidates) > 1:
        point["averaged"] = model_average_r0(summaries)

    results = run_bootstrap(spec, survey, serology, demography, jobs=ctx.jobs, progress=sys.stderr.isatty())
    write_frame(ctx.out / "bootstrap_replicates.csv", replicate_table(results, spec.models))
    write_frame(ctx.out / "bootstrap_params.csv", parameter_table(results))
    curves = q_curve_table(results, np.arange(0.0, np.floor(grid.upper) + 1.0))
    if len(curves):
        write_frame(ctx.out / "bootstrap_q_curves.csv", curves)
    report = summarize_bootstrap(results, spec, point)
    write_json(ctx.out / "bootstrap_summary.json", report)
    click.echo(f"{report.n_converged}/{spec.replicates} replicates converged")
