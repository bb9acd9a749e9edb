"""Online kernel CUSUM change-point detection for data streams."""

from .baselines import HotellingState, KcusumState, hotelling_statistic, kcusum_step, scan_b_fixed
from .bench import ExperimentSpec, ResultRow, emit_table, load_experiment, run_experiment
from .calibration import (
    CalibrationResult,
    arl_approx,
    edd_predict,
    monte_carlo_arl,
    monte_carlo_edd,
    monte_carlo_threshold,
    nu,
    recommend_window,
    threshold_for_arl,
)
from .detector import (
    DetectorConfig,
    KernelCusum,
    OracleKernelCusum,
    StepResult,
    StoppingReport,
    h_statistic,
    init_detector,
    init_oracle,
    mmd_unbiased,
    oracle_step,
    run_to_alarm,
    step,
)
from .distributions import DistributionSpec, sample
from .kernel import KernelSpec, eval_kernel, gram, median_heuristic
from .moments import (
    MomentEstimates,
    cov_h0,
    estimate_moments,
    mmd_population_estimate,
    third_moment_h0,
    var_h0,
)

__version__ = "0.1.0"

__all__ = [
    "HotellingState",
    "KcusumState",
    "hotelling_statistic",
    "kcusum_step",
    "scan_b_fixed",
    "ExperimentSpec",
    "ResultRow",
    "emit_table",
    "load_experiment",
    "run_experiment",
    "CalibrationResult",
    "arl_approx",
    "edd_predict",
    "monte_carlo_arl",
    "monte_carlo_edd",
    "monte_carlo_threshold",
    "nu",
    "recommend_window",
    "threshold_for_arl",
    "DetectorConfig",
    "KernelCusum",
    "OracleKernelCusum",
    "StepResult",
    "StoppingReport",
    "h_statistic",
    "init_detector",
    "init_oracle",
    "mmd_unbiased",
    "oracle_step",
    "run_to_alarm",
    "step",
    "DistributionSpec",
    "sample",
    "KernelSpec",
    "eval_kernel",
    "gram",
    "median_heuristic",
    "MomentEstimates",
    "cov_h0",
    "estimate_moments",
    "mmd_population_estimate",
    "third_moment_h0",
    "var_h0",
]
