"""Sequential importance sampling (particle filtering) engine."""
from .ensemble import EngineConfig, Ensemble, StepDiagnostics, auxiliary_step, init_ensemble, step, trajectories
from .filter import FitResult, Prediction, Summary, predict, run_filter, weighted_quantile
from .kernel import kernel_smooth_params
from .resampling import SCHEMES, copies, ess, normalize_log_weights, resample

__all__ = [
    "EngineConfig", "Ensemble", "StepDiagnostics", "auxiliary_step", "init_ensemble", "step", "trajectories",
    "FitResult", "Prediction", "Summary", "predict", "run_filter", "weighted_quantile",
    "kernel_smooth_params", "SCHEMES", "copies", "ess", "normalize_log_weights", "resample",
]
