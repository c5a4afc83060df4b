"""Single-photon detection: intensity trace -> time-tag stream."""

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import DetectorConfig
from .errors import ParameterValidationError, RateTooHighError
from .interferometer import IntensityTrace
from .logging_utils import track_step

logger = logging.getLogger(__name__)

MAX_CLICK_PROBABILITY = 0.1
MIN_EXPECTED_TAGS = 1000


@dataclass(frozen=True, eq=False)
class TagStream:
    """Strictly increasing detection timestamps (seconds) from one channel."""
    tags: np.ndarray
    duration: float
    channel_id: int = 0

    def __post_init__(self):
        tags = np.ascontiguousarray(self.tags, dtype=np.float64)
        if tags.ndim != 1:
            raise ParameterValidationError("TagStream tags must be 1-D")
        if not (self.duration > 0 and np.isfinite(self.duration)):
            raise ParameterValidationError(f"TagStream duration must be positive, got {self.duration}")
        tags.flags.writeable = False
        object.__setattr__(self, "tags", tags)

    def __len__(self):
        return self.tags.size

    @property
    def rate(self) -> float:
        return self.tags.size / self.duration

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.tags) > 0))


@njit(cache=True)
def _dead_time_kernel(tags, dead_time):
    keep = np.zeros(tags.size, dtype=np.bool_)
    if tags.size == 0:
        return keep
    keep[0] = True
    last = tags[0]
    for i in range(1, tags.size):
        # equal stamps are dropped even with zero dead time
        if tags[i] > last and tags[i] - last >= dead_time:
            keep[i] = True
            last = tags[i]
    return keep


def dead_time_filter(tags: np.ndarray, dead_time: float) -> np.ndarray:
    """Drop every tag closer than dead_time to the previously kept tag. Input must be sorted."""
    tags = np.ascontiguousarray(tags, dtype=np.float64)
    return tags[_dead_time_kernel(tags, float(dead_time))]


@track_step("detect")
def detect(intensity: IntensityTrace, flux: float, cfg: DetectorConfig, seed=None,
           channel_id: int = 0) -> TagStream:
    """Bernoulli thinning per sample, uniform placement, Gaussian jitter, dead time.

    Click probability per sample is efficiency * flux * I(t) * dt and must stay
    below 0.1. Tags jittered outside [0, duration] are dropped.
    """
    if cfg.seed is not None:
        seed = cfg.seed
    dt = intensity.dt
    duration = intensity.duration
    p = cfg.efficiency * flux * dt * intensity.samples
    worst = int(np.argmax(p))
    if p[worst] >= MAX_CLICK_PROBABILITY:
        raise RateTooHighError(
            f"Click probability {p[worst]:.3f} at sample {worst} reaches {MAX_CLICK_PROBABILITY}; lower flux or dt",
            sample_index=worst,
            probability=float(p[worst]),
        )

    rng = np.random.default_rng(seed)
    clicks = np.flatnonzero(rng.random(p.size) < p)
    tags = (clicks + rng.random(clicks.size)) * dt
    if cfg.jitter_sigma > 0:
        tags = tags + rng.normal(0.0, cfg.jitter_sigma, tags.size)
        tags.sort()
        tags = tags[(tags >= 0) & (tags <= duration)]
    tags = dead_time_filter(tags, cfg.dead_time)

    expected = cfg.efficiency * flux * dt * intensity.samples.sum()
    if tags.size < MIN_EXPECTED_TAGS:
        logger.warning(f"⚠️  Channel {channel_id}: only {tags.size} tags (expected ~{expected:.0f})")
    return TagStream(tags=tags, duration=duration, channel_id=channel_id)
