import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Literal, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ParameterValidationError, PhotostatIOError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

# Stream ids for per-realization seed derivation
SOURCE_STREAM = 0
DITHER_STREAM = 1
DETECTOR_A_STREAM = 2
DETECTOR_B_STREAM = 3

# TCSPC card resolution
DEFAULT_BIN_WIDTH = 164e-12


def default_jobs() -> int:
    """Worker count from PHOTOSTAT_JOBS, 1 when unset."""
    raw = os.getenv("PHOTOSTAT_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring non-integer PHOTOSTAT_JOBS={raw!r}")
        return 1


class SourceModel(BaseModel):
    """Parameterized generator settings for one of the three source classes."""
    kind: Literal["chaotic", "coherent_am", "mixture"] = Field(description="Source class")
    tau_c: float = Field(gt=0, description="Coherence time in seconds")
    tau_amp: Optional[float] = Field(default=None, gt=0, description="Amplitude-fluctuation correlation time in seconds (coherent_am)")
    alpha: Optional[float] = Field(default=None, ge=0, description="RIN integral, variance of intensity over squared mean (coherent_am)")
    x: Optional[float] = Field(default=None, ge=0, le=1, description="Coherent fraction (mixture)")
    amplitude_process: Literal["squared_ou", "gaussian_ou"] = Field(default="squared_ou", description="Amplitude-noise construction (coherent_am)")
    mixing: Literal["ensemble", "superposition"] = Field(default="ensemble", description="Mixture composition (mixture)")
    mixture_segments: int = Field(default=20, ge=1, description="Segments per trace for ensemble mixing")
    seed: Optional[int] = Field(default=None, description="RNG seed; derived from the master seed when omitted")

    @model_validator(mode="after")
    def _check_kind_params(self):
        if self.kind == "coherent_am":
            if self.tau_amp is None or self.alpha is None:
                raise ValueError("coherent_am source needs tau_amp and alpha")
            if self.tau_amp <= self.tau_c:
                raise ValueError(f"coherent_am needs tau_amp > tau_c (got {self.tau_amp} <= {self.tau_c})")
        if self.kind == "mixture" and self.x is None:
            raise ValueError("mixture source needs x")
        return self

    def slowest_time(self) -> float:
        """Longest correlation time of the source."""
        return max(self.tau_c, self.tau_amp or 0.0)


class InterferometerConfig(BaseModel):
    """Unbalanced Michelson settings."""
    delta: float = Field(default=0.0, ge=0, description="Interferometric delay in seconds")
    dither: Literal["none", "random_phase"] = Field(default="random_phase", description="Fringe dithering model")
    segment_duration: Optional[float] = Field(default=None, gt=0, description="Dither phase hold time in seconds")
    split_mode: Literal["both_arms", "block_arm"] = Field(default="both_arms", description="Measure g2x (both arms) or g2 (one arm blocked)")
    blocked_arm: Literal["short", "long"] = Field(default="long", description="Which arm is blocked in block_arm mode")

    @model_validator(mode="after")
    def _check_dither(self):
        if self.dither == "random_phase" and self.split_mode == "both_arms" and self.segment_duration is None:
            raise ValueError("random_phase dithering needs segment_duration")
        return self


class DetectorConfig(BaseModel):
    """Single-photon detector model. Defaults are typical SSPD values."""
    efficiency: float = Field(default=0.15, gt=0, le=1, description="Detection efficiency")
    jitter_sigma: float = Field(default=90e-12, ge=0, description="Gaussian timing jitter std in seconds")
    dead_time: float = Field(default=30e-9, ge=0, description="Hold-off after each kept tag in seconds")
    seed: Optional[int] = Field(default=None, description="RNG seed; derived from the master seed when omitted")

    @field_validator("jitter_sigma", "dead_time")
    @classmethod
    def _finite(cls, v):
        if not np.isfinite(v):
            raise ValueError("must be finite")
        return v


class CorrelatorConfig(BaseModel):
    bin_width: float = Field(default=DEFAULT_BIN_WIDTH, gt=0, description="Histogram bin width in seconds")
    window: Optional[float] = Field(default=None, gt=0, description="Histogram half-span in seconds; 4*(delta + 5*tau_amp) when omitted")


class RunConfig(BaseModel):
    duration: float = Field(gt=0, description="Duration of one realization in seconds")
    dt: float = Field(gt=0, description="Field sample interval in seconds")
    flux: float = Field(gt=0, description="Mean photon rate in photons/second")
    realizations: int = Field(default=1, ge=1, description="Independent realizations to merge")
    master_seed: int = Field(default=0, ge=0, description="Seed all per-realization seeds derive from")


class ExperimentConfig(BaseModel):
    """Full pipeline configuration: source, interferometer, detectors, correlator, run."""
    source: SourceModel
    interferometer: InterferometerConfig = Field(default_factory=InterferometerConfig)
    detectors: Tuple[DetectorConfig, DetectorConfig] = Field(default_factory=lambda: (DetectorConfig(), DetectorConfig()))
    correlator: CorrelatorConfig = Field(default_factory=CorrelatorConfig)
    run: RunConfig
    outputs: str = Field(default="photostat_out", description="Output directory")

    @model_validator(mode="after")
    def _check_cross_constraints(self):
        ifo = self.interferometer
        if ifo.dither == "random_phase" and ifo.split_mode == "both_arms":
            slowest = self.source.slowest_time()
            if ifo.segment_duration <= 50 * slowest:
                raise ValueError(f"dither segment_duration must exceed 50*{slowest:g} s")
            if ifo.segment_duration >= self.run.duration / 100:
                raise ValueError("dither segment_duration must be below duration/100")
        if ifo.delta >= self.run.duration:
            raise ValueError("delta must be shorter than the realization duration")
        return self

    @property
    def mode(self) -> str:
        return "auto" if self.interferometer.split_mode == "block_arm" else "cross"

    def resolved_window(self) -> float:
        if self.correlator.window is not None:
            return self.correlator.window
        return 4 * (self.interferometer.delta + 5 * self.source.slowest_time())


def config_hash(cfg: BaseModel) -> str:
    """SHA-256 of the canonical JSON dump of a config."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derive_seed(master_seed: int, realization: int, stream: int) -> np.random.SeedSequence:
    """Counter-based split of the master seed; independent of worker scheduling."""
    return np.random.SeedSequence(master_seed, spawn_key=(realization, stream))


def load_experiment_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise PhotostatIOError(f"Cannot read config {path}: {e}")
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise ParameterValidationError(f"Invalid config {path}: {e}")
