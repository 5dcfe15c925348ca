import logging

import click
import numpy as np

from serocontact.commands.common import (
    GlobalOptions,
    build_context,
    grid_from,
    load_demography,
    load_serology_input,
)
from serocontact.data_model import write_serology
from serocontact.errors import ConfigError
from serocontact.foi_core import PiecewiseFoi
from serocontact.report_utils import write_json
from serocontact.schemas import SimulationReport
from serocontact.simulation import augment_serology, simulate_serology

logger = logging.getLogger(__name__)


def _prevalence_from(config):
    sim = config.simulate
    if sim.constant_pi is not None and sim.foi is not None:
        raise ConfigError("simulate: give either constant_pi or foi, not both")
    if sim.constant_pi is not None:
        return float(sim.constant_pi)
    if sim.foi is not None:
        return PiecewiseFoi(grid_from(config), sim.foi, config.demography.maternal_antibody_age)
    raise ConfigError("simulate: constant_pi or foi is required")


@click.command(
    "simulate-serology",
    short_help="Synthetic serology from a constant prevalence or a force of infection",
)
@click.pass_obj
def command(options: GlobalOptions):
    """
    Draw immunity statuses and write serology_simulated.csv.

    In ``replace`` mode ages are uniform on simulate.age_range. In ``augment``
    mode subjects are allocated to one-year ages in proportion to the
    population and appended to inputs.serology.
    """
    ctx = build_context(options)
    config = ctx.config
    sim = config.simulate
    seed = sim.seed if ctx.seed is None else ctx.seed
    rng = np.random.default_rng(seed)
    prevalence = _prevalence_from(config)

    if sim.mode == "augment":
        existing = load_serology_input(config)
        dataset = augment_serology(existing, prevalence, sim.sample_size, rng, load_demography(config),
                                   tuple(sim.age_range))
        simulated_status = dataset.status[len(existing):]
    else:
        dataset = simulate_serology(prevalence, sim.sample_size, rng, tuple(sim.age_range))
        simulated_status = dataset.status

    path = ctx.out / "serology_simulated.csv"
    write_serology(dataset, path)
    fraction = float(simulated_status.mean()) if simulated_status.size else float("nan")
    write_json(ctx.out / "simulation.json", SimulationReport(
        mode=sim.mode, sample_size=int(simulated_status.size), n_records=len(dataset), seed=seed,
        prevalence=fraction,
    ))
    click.echo(f"wrote {len(dataset)} records to {path}")
