import logging

import click

from serocontact.commands.common import GlobalOptions, build_context, grid_from, load_serology_input
from serocontact.foi_core import fit_piecewise_foi, plotting_series
from serocontact.report_utils import write_frame, write_json

logger = logging.getLogger(__name__)


@click.command(
    "fit-foi",
    short_help="Piecewise-constant force of infection from serology",
)
@click.pass_obj
def command(options: GlobalOptions):
    """
    Fit a piecewise-constant force of infection on the configured age grid.

    Writes foi.json (estimates and diagnostics) and foi_series.csv
    (age, prevalence, foi) for plotting.
    """
    ctx = build_context(options)
    serology = load_serology_input(ctx.config)
    fit = fit_piecewise_foi(serology, grid_from(ctx.config), ctx.config.demography.maternal_antibody_age)
    write_json(ctx.out / "foi.json", fit.to_report())
    write_frame(ctx.out / "foi_series.csv", plotting_series(fit.foi, ctx.config.output.plot_step))
    click.echo(f"force of infection: loglik={fit.loglik:.3f} ({len(serology)} subjects)")
