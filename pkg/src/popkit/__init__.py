"""popkit: stochastic population dynamics models fitted by sequential importance sampling."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

from .config import dump_model, dumps, load_model, loads, model_from_dict, model_to_dict
from .estimator import SISEstimator
from .errors import (
    ConfigError,
    DataError,
    DegeneracyError,
    DomainError,
    OracleInvalidError,
    PopkitError,
    SchemaError,
    StateError,
    UnsupportedError,
)
from .model import (
    PopulationModel,
    compose_annual,
    expectation_matrix,
    leslie_product,
    model_1,
    model_2,
    model_3,
    simulate,
)
from .observation import ObservationModel, ObservationSeries
from .priors import InitialEntry, Prior
from .schema import StateSchema, StateVector
from .smc import EngineConfig, FitResult, predict, run_filter

__all__ = [
    "__version__", "dump_model", "dumps", "load_model", "loads", "model_from_dict", "model_to_dict",
    "ConfigError", "DataError", "DegeneracyError", "DomainError", "OracleInvalidError", "PopkitError",
    "SchemaError", "StateError", "UnsupportedError", "PopulationModel", "compose_annual", "expectation_matrix",
    "leslie_product", "model_1", "model_2", "model_3", "simulate", "ObservationModel", "ObservationSeries",
    "InitialEntry", "Prior", "StateSchema", "StateVector", "EngineConfig", "FitResult", "predict", "run_filter",
    "SISEstimator",
]
