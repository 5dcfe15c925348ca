"""
Command-line entry point: ``serocontact [--config FILE] [--seed N] [--jobs N] [--out DIR] COMMAND``.
"""
import logging

import click

from serocontact import __version__
from serocontact.commands import bootstrap, fit_foi, fit_models, simulate, smooth_contacts
from serocontact.commands.common import GlobalOptions
from serocontact.core.logging import configure_logging
from serocontact.errors import SeroContactError

logger = logging.getLogger(__name__)


class SeroContactGroup(click.Group):
    """Click group that turns package errors into their exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except SeroContactError as exc:
            logger.error("%s: %s", type(exc).__name__, exc.detail)
            click.echo(f"error: {exc.detail}", err=True)
            ctx.exit(exc.exit_code)


@click.group(cls=SeroContactGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML run configuration")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Overrides the configured seed")
@click.option("--jobs", type=click.IntRange(min=1), default=None, help="Worker processes")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory")
@click.option("--log-level", default=None, help="Overrides SEROCONTACT_LOG_LEVEL")
@click.version_option(__version__, prog_name="serocontact")
@click.pass_context
def cli(ctx: click.Context, config_path, seed, jobs, out, log_level):
    """Transmission parameters and R0 from serology and social contact data."""
    configure_logging(log_level)
    ctx.obj = GlobalOptions(config_path=config_path, seed=seed, jobs=jobs, out=out)


cli.add_command(fit_foi.command)
cli.add_command(smooth_contacts.command)
cli.add_command(fit_models.command)
cli.add_command(bootstrap.command)
cli.add_command(simulate.command)


if __name__ == "__main__":
    cli()
