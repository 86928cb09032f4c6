"""Simulation lab: designs, ground truth and Monte Carlo studies."""

from .dgp import SPEC_NAMES, DgpSpec, Latent, generate, get_spec, load_specs
from .study import CellSummary, SimulationReport, default_estimators, run_replication, run_study
from .truth import PopulationMeans, TrueEffect, population_means, qmc_means, true_effects

__all__ = [
    "SPEC_NAMES",
    "DgpSpec",
    "Latent",
    "generate",
    "get_spec",
    "load_specs",
    "CellSummary",
    "SimulationReport",
    "default_estimators",
    "run_replication",
    "run_study",
    "PopulationMeans",
    "TrueEffect",
    "population_means",
    "qmc_means",
    "true_effects",
]
