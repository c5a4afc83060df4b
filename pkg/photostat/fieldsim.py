"""Stochastic optical-field generators.

Every generator returns a unit-mean-intensity complex envelope sampled on a
uniform grid; the photon rate is carried separately as ``flux``. All
randomness comes from one ``numpy.random.Generator`` seeded by the caller,
so identical (params, seed) give bit-identical traces.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .config import SourceModel
from .errors import ClampRateError, ParameterValidationError
from .logging_utils import track_step

logger = logging.getLogger(__name__)

# Sampling and record-length rules shared by all generators
MIN_SAMPLES_PER_TAU = 20
MIN_DURATION_IN_TAU = 1000
MAX_CLAMP_FRACTION = 1e-3
# Shortest ensemble-mixture segment, in coherence times
MIN_SEGMENT_IN_TAU = 50
# Largest tolerated gap between requested and realized coherent fraction
MAX_MIXTURE_SNAP = 0.01

_GRID_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class FieldTrace:
    """Complex envelope a(t) of one field realization.

    |samples|^2 has unit time-average; multiply by ``flux`` for photons/second.
    """
    samples: np.ndarray
    dt: float
    flux: float = 1.0
    source: Optional[SourceModel] = None
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1 or samples.size == 0:
            raise ParameterValidationError("FieldTrace needs a nonempty 1-D sample array")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ParameterValidationError(f"FieldTrace dt must be positive, got {self.dt}")
        if not (self.flux > 0 and np.isfinite(self.flux)):
            raise ParameterValidationError(f"FieldTrace flux must be positive, got {self.flux}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.n * self.dt

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2


def _check_sampling(tau_c, duration, dt, slowest):
    if dt > tau_c / MIN_SAMPLES_PER_TAU * (1 + _GRID_RTOL):
        raise ParameterValidationError(
            f"dt={dt:g} s too coarse for tau_c={tau_c:g} s (need dt <= tau_c/{MIN_SAMPLES_PER_TAU})",
            {"dt": dt, "tau_c": tau_c},
        )
    if duration < MIN_DURATION_IN_TAU * slowest * (1 - _GRID_RTOL):
        raise ParameterValidationError(
            f"duration={duration:g} s too short (need >= {MIN_DURATION_IN_TAU}*{slowest:g} s)",
            {"duration": duration, "correlation_time": slowest},
        )
    return int(round(duration / dt))


def _complex_ou(rng, n, step_ratio):
    """Unit-variance circular complex OU process, exact AR(1) discretization.

    Autocorrelation <z*(t) z(t+k dt)> = exp(-k * step_ratio).
    """
    rho = np.exp(-step_ratio)
    xi = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    drive = xi * np.sqrt(1.0 - rho ** 2)
    # stationary start
    drive[0] = xi[0]
    return lfilter([1.0], [1.0, -rho], drive)


def _real_ou(rng, n, step_ratio, variance):
    rho = np.exp(-step_ratio)
    xi = rng.standard_normal(n) * np.sqrt(variance)
    drive = xi * np.sqrt(1.0 - rho ** 2)
    drive[0] = xi[0]
    return lfilter([1.0], [1.0, -rho], drive)


def _wiener_phase(rng, n, dt, tau_c):
    """Phase diffusion at rate 2/tau_c, so |<exp(i dphi(tau))>| = exp(-|tau|/tau_c)."""
    steps = rng.standard_normal(n) * np.sqrt(2.0 * dt / tau_c)
    steps[0] = rng.uniform(0.0, 2 * np.pi)
    return np.cumsum(steps)


@track_step("generate_chaotic")
def generate_chaotic(tau_c: float, duration: float, dt: float, seed=None, flux: float = 1.0) -> FieldTrace:
    """Complex Gaussian (Ornstein-Uhlenbeck) field with Lorentzian spectrum of half-width 1/tau_c."""
    n = _check_sampling(tau_c, duration, dt, tau_c)
    rng = np.random.default_rng(seed)
    samples = _complex_ou(rng, n, dt / tau_c)
    source = SourceModel(kind="chaotic", tau_c=tau_c)
    return FieldTrace(samples=samples, dt=dt, flux=flux, source=source)


@track_step("generate_coherent_am")
def generate_coherent_am(tau_c: float, tau_amp: float, alpha: float, duration: float, dt: float,
                         seed=None, flux: float = 1.0,
                         amplitude_process: str = "squared_ou") -> FieldTrace:
    """Coherent field with Wiener phase and intensity noise 1 + m(t).

    m has variance ``alpha`` and autocovariance alpha*exp(-2|tau|/tau_amp).
    ``squared_ou`` builds m from the squared modulus of a complex OU process
    (never negative intensity for alpha < 1); ``gaussian_ou`` uses a real OU
    process and clamps 1 + m at zero.

    The whole first-order decay is assigned to phase diffusion; the amplitude
    noise lowers |g1| slightly below exp(-|tau|/tau_c) for large alpha.
    """
    if tau_amp <= tau_c:
        raise ParameterValidationError(f"tau_amp={tau_amp:g} must exceed tau_c={tau_c:g}")
    if not 0 <= alpha < 1:
        raise ParameterValidationError(f"alpha must lie in [0, 1), got {alpha}")
    n = _check_sampling(tau_c, duration, dt, tau_amp)
    rng = np.random.default_rng(seed)

    if amplitude_process == "squared_ou":
        z = _complex_ou(rng, n, dt / tau_amp)
        m = np.sqrt(alpha) * (np.abs(z) ** 2 - 1.0)
    elif amplitude_process == "gaussian_ou":
        m = _real_ou(rng, n, dt / (tau_amp / 2), alpha)
    else:
        raise ParameterValidationError(f"Unknown amplitude_process {amplitude_process!r}")

    intensity = 1.0 + m
    negative = intensity < 0
    clamped = int(np.count_nonzero(negative))
    if clamped:
        fraction = clamped / n
        logger.warning(f"Clamped {clamped} of {n} intensity samples at zero ({fraction:.3%})")
        if fraction > MAX_CLAMP_FRACTION:
            raise ClampRateError(
                f"Clamp rate {fraction:.3%} exceeds {MAX_CLAMP_FRACTION:.1%}; lower alpha or use squared_ou",
                {"clamped": clamped, "samples": n, "alpha": alpha},
            )
        intensity[negative] = 0.0

    phase = _wiener_phase(rng, n, dt, tau_c)
    samples = np.sqrt(intensity) * np.exp(1j * phase)
    source = SourceModel(kind="coherent_am", tau_c=tau_c, tau_amp=tau_amp, alpha=alpha,
                         amplitude_process=amplitude_process)
    return FieldTrace(samples=samples, dt=dt, flux=flux, source=source, clamped=clamped)


@track_step("generate_mixture")
def generate_mixture(x: float, tau_c: float, duration: float, dt: float, seed=None, flux: float = 1.0,
                     mixing: str = "ensemble", segments: int = 20) -> FieldTrace:
    """Mixture of a fraction x of coherent light and 1 - x of chaotic light.

    ``ensemble`` splits the trace into ``segments`` equal pieces and makes
    exactly round(x * segments) of them coherent (phase-diffusing, no
    amplitude noise) and the rest chaotic; the cross-correlation dip is then
    1 - x/2. The realized fraction is what the trace's source records, with a
    warning when it misses x by more than MAX_MIXTURE_SNAP. ``superposition``
    adds the two fields coherently, which gives a dip of 1 - x**2/2.
    """
    if not 0 <= x <= 1:
        raise ParameterValidationError(f"x must lie in [0, 1], got {x}")
    n = _check_sampling(tau_c, duration, dt, tau_c)
    rng = np.random.default_rng(seed)

    chaotic = _complex_ou(rng, n, dt / tau_c)
    coherent = np.exp(1j * _wiener_phase(rng, n, dt, tau_c))

    if mixing == "ensemble":
        if duration / segments < MIN_SEGMENT_IN_TAU * tau_c:
            raise ParameterValidationError(
                f"{segments} mixture segments too short for tau_c={tau_c:g} s",
                {"segments": segments, "duration": duration},
            )
        edges = np.linspace(0, n, segments + 1).astype(np.int64)
        n_coherent = int(round(x * segments))
        realized = n_coherent / segments
        if abs(realized - x) > MAX_MIXTURE_SNAP:
            logger.warning(f"⚠️  x={x:g} snapped to {realized:g} ({n_coherent} of {segments} segments coherent); "
                           f"raise mixture_segments for a finer grid")
        x = realized
        is_coherent = np.zeros(segments, dtype=bool)
        is_coherent[rng.permutation(segments)[:n_coherent]] = True
        per_sample = np.repeat(is_coherent, np.diff(edges))
        samples = np.where(per_sample, coherent, chaotic)
    elif mixing == "superposition":
        samples = np.sqrt(x) * coherent + np.sqrt(1.0 - x) * chaotic
    else:
        raise ParameterValidationError(f"Unknown mixing mode {mixing!r}")

    source = SourceModel(kind="mixture", tau_c=tau_c, x=x, mixing=mixing, mixture_segments=segments)
    return FieldTrace(samples=samples, dt=dt, flux=flux, source=source)


def generate(source: SourceModel, duration: float, dt: float, seed=None, flux: float = 1.0) -> FieldTrace:
    """Dispatch on ``source.kind``; ``source.seed`` wins over ``seed`` when set."""
    if source.seed is not None:
        seed = source.seed
    if source.kind == "chaotic":
        return generate_chaotic(source.tau_c, duration, dt, seed=seed, flux=flux)
    if source.kind == "coherent_am":
        return generate_coherent_am(source.tau_c, source.tau_amp, source.alpha, duration, dt,
                                    seed=seed, flux=flux, amplitude_process=source.amplitude_process)
    return generate_mixture(source.x, source.tau_c, duration, dt, seed=seed, flux=flux,
                            mixing=source.mixing, segments=source.mixture_segments)


def lags_to_samples(lags, dt: float) -> np.ndarray:
    """Convert lag times to integer sample offsets, rejecting off-grid values."""
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    k = np.rint(lags / dt)
    if np.any(np.abs(k * dt - lags) > 1e-6 * dt):
        raise ParameterValidationError("lags must be integer multiples of dt")
    return k.astype(np.int64)


def estimate_g1(trace: FieldTrace, lags) -> np.ndarray:
    """Normalized first-order correlation <a*(t) a(t+tau)> / <|a|^2> by direct lagged products."""
    a = trace.samples
    mean_intensity = np.mean(np.abs(a) ** 2)
    out = np.empty(len(np.atleast_1d(lags)), dtype=np.complex128)
    for i, k in enumerate(lags_to_samples(lags, trace.dt)):
        k = abs(int(k))
        out[i] = np.mean(np.conj(a[:a.size - k]) * a[k:]) / mean_intensity
    return out


def estimate_g2(trace: FieldTrace, lags) -> np.ndarray:
    """Normalized intensity autocorrelation <I(t) I(t+tau)> / <I>^2 by direct lagged products."""
    intensity = trace.intensity
    mean_intensity = intensity.mean()
    out = np.empty(len(np.atleast_1d(lags)))
    for i, k in enumerate(lags_to_samples(lags, trace.dt)):
        k = abs(int(k))
        out[i] = np.mean(intensity[:intensity.size - k] * intensity[k:]) / mean_intensity ** 2
    return out
