"""Unbalanced Michelson interferometer acting on a classical field envelope.

Output ports, with dither phase phi(t):
    E_A(t) = (a(t+delta) e^{i phi(t)} - a(t)) / sqrt(2)
    E_B(t) = (a(t+delta) e^{i phi(t)} + a(t)) / sqrt(2)

The operator-ordering subtlety at tau = 0 is absorbed by the classical
envelope, which is accurate at the mean photon numbers of interest.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .config import InterferometerConfig
from .errors import ParameterValidationError
from .fieldsim import FieldTrace
from .logging_utils import track_step

logger = logging.getLogger(__name__)

# Dither segment bounds relative to the source and record
MIN_SEGMENT_IN_SLOWEST_TIME = 50
MAX_SEGMENT_FRACTION = 1 / 100
# Fraction of each port's intensity that reaches its detector; the ports
# together carry twice the source mean
PORT_SHARE = 0.5


@dataclass(frozen=True, eq=False)
class IntensityTrace:
    """Real intensity at one output port, in units of the input mean intensity."""
    samples: np.ndarray
    dt: float
    flux: float = 1.0

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ParameterValidationError("IntensityTrace needs a nonempty 1-D sample array")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.n * self.dt


def delay_in_samples(delta: float, dt: float) -> int:
    """delta / dt as an integer, or a delta-not-on-grid error."""
    k = int(round(delta / dt))
    if abs(k * dt - delta) > 1e-6 * dt:
        raise ParameterValidationError(
            f"delta={delta:g} s is not a multiple of dt={dt:g} s",
            {"delta": delta, "dt": dt, "nearest": k * dt},
        )
    return k


def dither_phases(n: int, dt: float, cfg: InterferometerConfig, seed=None) -> Optional[np.ndarray]:
    """Piecewise-constant uniform random phases, one per dither segment."""
    if cfg.dither == "none":
        return None
    seg_len = max(1, int(round(cfg.segment_duration / dt)))
    n_segments = -(-n // seg_len)
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, n_segments)
    return np.repeat(phases, seg_len)[:n]


def _check_dither_bounds(trace: FieldTrace, cfg: InterferometerConfig):
    if cfg.dither == "none":
        return
    if cfg.segment_duration >= trace.duration * MAX_SEGMENT_FRACTION:
        raise ParameterValidationError(
            f"dither segment {cfg.segment_duration:g} s must be below duration/100 = {trace.duration / 100:g} s"
        )
    if trace.source is not None:
        slowest = trace.source.slowest_time()
        if cfg.segment_duration <= MIN_SEGMENT_IN_SLOWEST_TIME * slowest:
            raise ParameterValidationError(
                f"dither segment {cfg.segment_duration:g} s must exceed {MIN_SEGMENT_IN_SLOWEST_TIME}*{slowest:g} s"
            )


@track_step("interferometer_transform")
def transform(trace: FieldTrace, cfg: InterferometerConfig, seed=None) -> Tuple[IntensityTrace, IntensityTrace]:
    """Intensities I_A = |E_A|^2 and I_B = |E_B|^2 at the two output ports.

    Outputs cover the n - delta/dt samples for which t + delta lies in the
    input record. I_A + I_B = |a(t)|^2 + |a(t+delta)|^2 for every sample.
    """
    k = delay_in_samples(cfg.delta, trace.dt)
    n_out = trace.n - k
    if n_out < max(1, k):
        raise ParameterValidationError(
            f"trace of {trace.n} samples too short for a delay of {k} samples",
            {"samples": trace.n, "delay_samples": k},
        )
    _check_dither_bounds(trace, cfg)

    a = trace.samples
    early = a[:n_out]
    late = a[k:k + n_out]
    phases = dither_phases(n_out, trace.dt, cfg, seed)
    if phases is not None:
        late = late * np.exp(1j * phases)

    intensity_a = np.abs(late - early) ** 2 / 2
    intensity_b = np.abs(late + early) ** 2 / 2
    return (IntensityTrace(intensity_a, trace.dt, trace.flux),
            IntensityTrace(intensity_b, trace.dt, trace.flux))


@track_step("detector_intensities")
def detector_intensities(trace: FieldTrace, cfg: InterferometerConfig,
                         seed=None) -> Tuple[IntensityTrace, IntensityTrace]:
    """Intensity reaching detectors A and B, in units of the source mean intensity.

    With both arms open the port intensities are scaled by PORT_SHARE, so the
    two detectors together see (|a(t)|^2 + |a(t+delta)|^2) / 2 and each one
    clicks at half the source rate. With one arm blocked both detectors see
    |a(t)|^2 / 4.
    """
    if cfg.split_mode == "block_arm":
        blocked = blocked_arm_intensity(trace)
        return blocked, blocked
    port_a, port_b = transform(trace, cfg, seed=seed)
    return (IntensityTrace(port_a.samples * PORT_SHARE, port_a.dt, port_a.flux),
            IntensityTrace(port_b.samples * PORT_SHARE, port_b.dt, port_b.flux))


@track_step("blocked_arm_intensity")
def blocked_arm_intensity(trace: FieldTrace) -> IntensityTrace:
    """Per-detector intensity |a(t)|^2 / 4 with one arm blocked.

    Half of the light is lost in the blocked arm and the returning half is
    split evenly between the two detectors, which then measure g2 of the source.
    """
    return IntensityTrace(trace.intensity / 4, trace.dt, trace.flux)


def fringe_term(trace: FieldTrace, cfg: InterferometerConfig, seed=None) -> float:
    """Time-averaged interference term 2 Re<a*(t) a(t+delta) e^{i phi}> / <|a|^2>.

    Dithering drives this towards zero; without it a coherent input with
    delta < tau_c gives a value of order one.
    """
    k = delay_in_samples(cfg.delta, trace.dt)
    n_out = trace.n - k
    a = trace.samples
    late = a[k:k + n_out]
    phases = dither_phases(n_out, trace.dt, cfg, seed)
    if phases is not None:
        late = late * np.exp(1j * phases)
    return float(2 * np.mean(np.real(np.conj(a[:n_out]) * late)) / np.mean(trace.intensity))
