import logging

import click

from serocontact.commands.common import (
    GlobalOptions,
    basis_from,
    build_context,
    grid_from,
    load_demography,
    load_survey_input,
)
from serocontact.contact_surface import (
    build_count_table,
    compare_contact_models,
    contact_rates_from_matrix,
    evaluate_surface,
    fit_negbin_tensor_gam,
    saturated_contact_matrix,
    symmetrize_reciprocal,
)
from serocontact.data_model import AgeGrid, filter_contacts
from serocontact.report_utils import write_frame, write_json, write_matrix

logger = logging.getLogger(__name__)


@click.command(
    "smooth-contacts",
    short_help="Negative binomial P-spline contact surface",
)
@click.pass_obj
def command(options: GlobalOptions):
    """
    Smooth the contact survey for the configured contact filter.

    Writes the raw, reciprocal and coarse-rate matrices, the surface JSON, the
    saturated coarse matrix and the AIC comparison of the two contact models.
    """
    ctx = build_context(options)
    config = ctx.config
    demography = load_demography(config)
    survey = filter_contacts(load_survey_input(config, demography), config.contacts.filter)
    fine = AgeGrid.one_year(upper=config.contacts.upper_age)
    coarse = grid_from(config)

    surface = fit_negbin_tensor_gam(
        build_count_table(survey, fine), basis_from(config), config.smoothing.log10_lambda_grid,
        max_iter=config.smoothing.max_iter, tol=config.smoothing.tol, contact_filter=config.contacts.filter,
    )
    fine_population = demography.population_on(fine)
    raw = evaluate_surface(surface, fine)
    symmetric = symmetrize_reciprocal(raw, fine_population)
    rates = contact_rates_from_matrix(symmetric, fine_population, coarse=coarse)

    labels = fine.labels()
    write_matrix(ctx.out / "contacts_raw.csv", raw.values, labels, labels)
    write_matrix(ctx.out / "contacts_symmetric.csv", symmetric.values, labels, labels)
    write_matrix(ctx.out / "contact_rates.csv", rates.values, coarse.labels(), coarse.labels())
    write_json(ctx.out / "surface.json", {"report": surface.to_report(), "surface": surface.to_dict()})

    coarse_population = demography.population_on(coarse)
    saturated = saturated_contact_matrix(survey, coarse, coarse_population)
    write_matrix(ctx.out / "contacts_saturated.csv", saturated.matrix.values, coarse.labels(), coarse.labels())
    write_frame(ctx.out / "contact_models.csv",
                compare_contact_models(surface, saturated, survey, coarse_population))
    click.echo(f"contact surface {config.contacts.filter}: lambda=({surface.lambda_rows:g}, "
               f"{surface.lambda_cols:g}) k={surface.dispersion:.4g} edf={surface.edf:.2f}")
