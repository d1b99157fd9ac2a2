from .config import ConfigError, ExperimentConfig, Sweep, load_config, preset
from .results import emit_convergence_trace, emit_results, read_convergence_trace, read_results, summarize
from .runner import (
    ResultRecord,
    convergence_trace,
    fd_baseline,
    random_phase_baseline,
    run_experiment,
    run_trial,
    trial_seeds,
)

__all__ = [
    "ConfigError", "ExperimentConfig", "Sweep", "load_config", "preset",
    "emit_convergence_trace", "emit_results", "read_convergence_trace", "read_results", "summarize",
    "ResultRecord", "convergence_trace", "fd_baseline", "random_phase_baseline",
    "run_experiment", "run_trial", "trial_seeds",
]
