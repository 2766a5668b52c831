"""Sequential change detection with leave-one-out density estimation.

A window-limited CuSum test whose log-likelihood ratio replaces the unknown
post-change density with a leave-one-out kernel density estimate, alongside
the classical CuSum and window-limited GLR baselines, plus a Monte Carlo
harness measuring false-alarm rates and detection delays.
"""

from .density import (
    EPANECHNIKOV,
    GAUSSIAN,
    BandwidthPolicy,
    ClampBounds,
    EstimatorRateBounds,
    Kernel,
    MonteCarloEstimate,
    bandwidth,
    clamp_density,
    estimate_kl_loss,
    estimate_mise,
    fit_rate_bounds,
    loo_kde_at,
    loo_kde_on_grid,
)
from .detect import (
    PER_SEGMENT,
    PER_TIME,
    Alarm,
    CusumDetector,
    LooCusumDetector,
    ThresholdPolicy,
    WindowPolicy,
    WlGlrCusumDetector,
    loo_cusum_statistic,
    loo_llr,
    run_detector,
    threshold_from_alpha,
    window_from_alpha,
)
from .errors import (
    DegenerateWindowError,
    DelayUnreliableError,
    InsufficientSamplesError,
    LoocusumError,
    QuadratureError,
    RateViolationError,
)
from .model import (
    ChangePointModel,
    GaussianModel,
    SampleStream,
    kl_divergence,
    log_likelihood_ratio,
)
from .sim import (
    CUSUM,
    DETECTOR_KINDS,
    LOO_CUSUM,
    WL_GLR,
    DelayEstimate,
    DeviationReport,
    FalseAlarmCheck,
    MatchedPoint,
    MtfaEstimate,
    OperatingPoint,
    TrialPlan,
    check_false_alarm_bound,
    check_llr_deviation_decay,
    compare_at_matched_mtfa,
    estimate_delay,
    estimate_mtfa,
    run_detector_on_array,
    sweep_operating_characteristic,
)

__version__ = "0.1.0"

__all__ = [
    "Alarm",
    "BandwidthPolicy",
    "ChangePointModel",
    "ClampBounds",
    "CusumDetector",
    "CUSUM",
    "DegenerateWindowError",
    "DelayEstimate",
    "DelayUnreliableError",
    "DeviationReport",
    "DETECTOR_KINDS",
    "EPANECHNIKOV",
    "EstimatorRateBounds",
    "FalseAlarmCheck",
    "GAUSSIAN",
    "GaussianModel",
    "InsufficientSamplesError",
    "Kernel",
    "LOO_CUSUM",
    "LooCusumDetector",
    "LoocusumError",
    "MatchedPoint",
    "MonteCarloEstimate",
    "MtfaEstimate",
    "OperatingPoint",
    "PER_SEGMENT",
    "PER_TIME",
    "QuadratureError",
    "RateViolationError",
    "SampleStream",
    "ThresholdPolicy",
    "TrialPlan",
    "WindowPolicy",
    "WlGlrCusumDetector",
    "WL_GLR",
    "bandwidth",
    "check_false_alarm_bound",
    "check_llr_deviation_decay",
    "clamp_density",
    "compare_at_matched_mtfa",
    "estimate_delay",
    "estimate_kl_loss",
    "estimate_mise",
    "estimate_mtfa",
    "fit_rate_bounds",
    "kl_divergence",
    "log_likelihood_ratio",
    "loo_cusum_statistic",
    "loo_kde_at",
    "loo_kde_on_grid",
    "loo_llr",
    "run_detector",
    "run_detector_on_array",
    "sweep_operating_characteristic",
    "threshold_from_alpha",
    "window_from_alpha",
]
