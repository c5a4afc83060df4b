"""Photon-correlation interferometry simulator and source classifier."""

from .analysis import FitReport, classify, fit_g2, fit_g2x, predict_g2x
from .config import (
    CorrelatorConfig,
    DetectorConfig,
    ExperimentConfig,
    InterferometerConfig,
    RunConfig,
    SourceModel,
)
from .correlator import (
    CorrelationHistogram,
    autocorrelate,
    cross_correlate,
    merge,
    oracle_six_terms,
)
from .detector import TagStream, detect
from .errors import (
    ClampRateError,
    InsufficientStatisticsError,
    NonConvergenceError,
    ParameterValidationError,
    PhotostatError,
    PhotostatIOError,
    RateTooHighError,
)
from .fieldsim import (
    FieldTrace,
    estimate_g1,
    estimate_g2,
    generate,
    generate_chaotic,
    generate_coherent_am,
    generate_mixture,
)
from .interferometer import IntensityTrace, blocked_arm_intensity, detector_intensities, transform
from .pipeline import run_experiment, run_realization

__version__ = "0.1.0"

__all__ = [
    "FitReport",
    "classify",
    "fit_g2",
    "fit_g2x",
    "predict_g2x",
    "CorrelatorConfig",
    "DetectorConfig",
    "ExperimentConfig",
    "InterferometerConfig",
    "RunConfig",
    "SourceModel",
    "CorrelationHistogram",
    "autocorrelate",
    "cross_correlate",
    "merge",
    "oracle_six_terms",
    "TagStream",
    "detect",
    "ClampRateError",
    "InsufficientStatisticsError",
    "NonConvergenceError",
    "ParameterValidationError",
    "PhotostatError",
    "PhotostatIOError",
    "RateTooHighError",
    "FieldTrace",
    "estimate_g1",
    "estimate_g2",
    "generate",
    "generate_chaotic",
    "generate_coherent_am",
    "generate_mixture",
    "IntensityTrace",
    "blocked_arm_intensity",
    "detector_intensities",
    "transform",
    "run_experiment",
    "run_realization",
]
