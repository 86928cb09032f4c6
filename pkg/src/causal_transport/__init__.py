"""Transporting first-moment causal effect measures from a trial to a target population.

The package estimates population effect measures ``tau = Phi(E_T[Y(1)], E_T[Y(0)])``
(risk difference, risk ratio, odds ratio and nine others) in a target
population, from randomized-trial data plus covariates sampled in the target.
"""

__version__ = "0.1.0"

from .data import CsvSchema, StudyData, load_csv, profile, write_csv
from .exceptions import (
    BootstrapError,
    CapabilityError,
    ConvergenceError,
    CsvSchemaError,
    DataValidationError,
    DerivativeError,
    DomainError,
    FoldError,
    OverlapError,
    SeparationError,
    SingularMatrixError,
    StudyError,
    TransportError,
    UnknownMeasureError,
)
from .measures import MEASURE_NAMES, MEASURES, EffectMeasure, get_measure, registry_selfcheck
from .nuisance import (
    LogisticDensityRatio,
    NewtonLogisticRegression,
    OutcomeRegression,
    crossfit_nuisances,
    fit_nuisances,
)
from .pipeline import NuisanceConfig, bootstrap, estimate_cell, run_estimators
from .estimators_mean import EstimateReport

__all__ = [
    "__version__",
    "CsvSchema",
    "StudyData",
    "load_csv",
    "write_csv",
    "profile",
    "EffectMeasure",
    "MEASURES",
    "MEASURE_NAMES",
    "get_measure",
    "registry_selfcheck",
    "NewtonLogisticRegression",
    "OutcomeRegression",
    "LogisticDensityRatio",
    "fit_nuisances",
    "crossfit_nuisances",
    "NuisanceConfig",
    "EstimateReport",
    "estimate_cell",
    "run_estimators",
    "bootstrap",
    "BootstrapError",
    "CapabilityError",
    "ConvergenceError",
    "CsvSchemaError",
    "DataValidationError",
    "DerivativeError",
    "DomainError",
    "FoldError",
    "OverlapError",
    "SeparationError",
    "SingularMatrixError",
    "StudyError",
    "TransportError",
    "UnknownMeasureError",
]
