"""Time-tag correlator and the six-term field oracle.

The correlator is a full multi-start correlator: every (start, stop) pair
within +/- window is histogrammed, as a TCSPC card does in its
cross-correlation mode. Only start tags whose whole window lies inside the
record are used, so g2 = counts / (r_A r_B T_eff bin_width) needs no
per-lag edge correction.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from .detector import TagStream
from .errors import ParameterValidationError
from .fieldsim import FieldTrace, lags_to_samples
from .interferometer import delay_in_samples
from .logging_utils import track_step

logger = logging.getLogger(__name__)

MIN_BINS_PER_WINDOW = 10
ORACLE_MIN_LENGTH_FACTOR = 100


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    """Binned pair counts over [-window, +window] with their normalization."""
    bin_width: float
    window: float
    counts: np.ndarray
    n_a: int
    n_b: int
    record_time: float
    total_time: float
    mode: str = "cross"
    delta: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def tau(self) -> np.ndarray:
        """Bin centers in seconds."""
        return -self.window + (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def rates(self):
        if self.record_time <= 0:
            return (0.0, 0.0)
        return (self.n_a / self.record_time, self.n_b / self.record_time)

    @property
    def normalization(self) -> float:
        rate_a, rate_b = self.rates
        return rate_a * rate_b * self.total_time * self.bin_width

    @property
    def g2(self) -> np.ndarray:
        norm = self.normalization
        if norm <= 0:
            return np.zeros(self.n_bins)
        return self.counts / norm

    @property
    def sigma(self) -> np.ndarray:
        norm = self.normalization
        if norm <= 0:
            return np.full(self.n_bins, np.inf)
        counts = self.counts.astype(np.float64)
        # empty bins get the one-count bound
        return np.where(counts > 0, np.sqrt(np.maximum(counts, 1.0)) / norm, 1.0 / norm)

    def is_empty(self) -> bool:
        return self.record_time == 0 and self.counts.sum() == 0


def empty_histogram(bin_width: float, window: float, n_bins: int, mode: str = "cross",
                    delta: Optional[float] = None) -> CorrelationHistogram:
    """Identity element of ``merge``."""
    return CorrelationHistogram(bin_width=bin_width, window=window, counts=np.zeros(n_bins, np.int64),
                                n_a=0, n_b=0, record_time=0.0, total_time=0.0, mode=mode, delta=delta)


@njit(cache=True)
def _sweep(a, b, window, bin_width, n_bins, t_lo, t_hi):
    counts = np.zeros(n_bins, dtype=np.int64)
    lo = 0
    nb = b.size
    for i in range(a.size):
        ta = a[i]
        if ta < t_lo:
            continue
        if ta > t_hi:
            break
        while lo < nb and b[lo] - ta < -window:
            lo += 1
        j = lo
        while j < nb:
            d = b[j] - ta
            if d >= window:
                break
            k = int(np.floor((d + window) / bin_width))
            if 0 <= k < n_bins:
                counts[k] += 1
            j += 1
    return counts


def _bins(bin_width, window):
    if window < MIN_BINS_PER_WINDOW * bin_width:
        raise ParameterValidationError(
            f"window={window:g} s must be at least {MIN_BINS_PER_WINDOW} bins of {bin_width:g} s"
        )
    n_bins = int(round(2 * window / bin_width))
    return n_bins, n_bins * bin_width / 2


def _validate_streams(a: TagStream, b: TagStream, window: float):
    for stream in (a, b):
        if stream.tags.size > 1 and np.any(np.diff(stream.tags) < 0):
            raise ParameterValidationError(f"channel {stream.channel_id} tags are not sorted")
    if not np.isclose(a.duration, b.duration, rtol=1e-9, atol=0.0):
        raise ParameterValidationError(
            f"duration mismatch: {a.duration:g} s vs {b.duration:g} s",
            {"duration_a": a.duration, "duration_b": b.duration},
        )
    if a.duration <= 2 * window:
        raise ParameterValidationError(f"record of {a.duration:g} s too short for window {window:g} s")


def naive_pair_counts(a: np.ndarray, b: np.ndarray, duration: float, bin_width: float, window: float) -> np.ndarray:
    """O(N_a N_b) reference for the sweep; same binning and start-tag rule."""
    n_bins, window = _bins(bin_width, window)
    a = np.asarray(a, dtype=np.float64)
    starts = a[(a >= window) & (a <= duration - window)]
    d = np.asarray(b, dtype=np.float64)[None, :] - starts[:, None]
    k = np.floor((d + window) / bin_width)
    k = k[(d >= -window) & (d < window) & (k >= 0) & (k < n_bins)].astype(np.int64)
    return np.bincount(k, minlength=n_bins).astype(np.int64)


@track_step("cross_correlate")
def cross_correlate(a: TagStream, b: TagStream, bin_width: float, window: float,
                    mode: str = "cross", delta: Optional[float] = None) -> CorrelationHistogram:
    """Normalized histogram of t_b - t_a over all pairs within +/- window.

    Runs a two-pointer sweep over the sorted streams, O(N_a + N_b + pairs).
    """
    n_bins, window = _bins(bin_width, window)
    _validate_streams(a, b, window)
    counts = _sweep(a.tags, b.tags, window, bin_width, n_bins, window, a.duration - window)
    return CorrelationHistogram(
        bin_width=bin_width,
        window=window,
        counts=counts,
        n_a=int(a.tags.size),
        n_b=int(b.tags.size),
        record_time=float(a.duration),
        total_time=float(a.duration - 2 * window),
        mode=mode,
        delta=delta,
    )


def autocorrelate(a: TagStream, b: TagStream, bin_width: float, window: float) -> CorrelationHistogram:
    """g2 of the source from the two detectors behind one splitter (one arm blocked)."""
    return cross_correlate(a, b, bin_width, window, mode="auto", delta=0.0)


def merge(h1: CorrelationHistogram, h2: CorrelationHistogram) -> CorrelationHistogram:
    """Sum two histograms of identical binning; rates and g2 are re-derived."""
    if (h1.n_bins != h2.n_bins or not np.isclose(h1.bin_width, h2.bin_width, rtol=1e-12)
            or not np.isclose(h1.window, h2.window, rtol=1e-12)):
        raise ParameterValidationError(
            "cannot merge histograms with different binning",
            {"bins": (h1.n_bins, h2.n_bins), "bin_width": (h1.bin_width, h2.bin_width),
             "window": (h1.window, h2.window)},
        )
    if h1.mode != h2.mode:
        raise ParameterValidationError(f"cannot merge {h1.mode} and {h2.mode} histograms")
    if h1.delta is not None and h2.delta is not None and not np.isclose(h1.delta, h2.delta, rtol=1e-9, atol=0.0):
        raise ParameterValidationError(
            f"cannot merge histograms taken at delta={h1.delta:g} s and delta={h2.delta:g} s",
            {"delta": (h1.delta, h2.delta)},
        )
    return replace(
        h1,
        counts=h1.counts + h2.counts,
        n_a=h1.n_a + h2.n_a,
        n_b=h1.n_b + h2.n_b,
        record_time=h1.record_time + h2.record_time,
        total_time=h1.total_time + h2.total_time,
        delta=h1.delta if h1.delta is not None else h2.delta,
    )


def merge_all(histograms) -> CorrelationHistogram:
    histograms = list(histograms)
    if not histograms:
        raise ParameterValidationError("nothing to merge")
    result = histograms[0]
    for h in histograms[1:]:
        result = merge(result, h)
    return result


@track_step("oracle_six_terms")
def oracle_six_terms(trace: FieldTrace, delta: float, tau_grid) -> np.ndarray:
    """Dither-averaged g2x(tau, delta) evaluated directly on the field envelope.

    Sum of the four intensity-correlation terms minus twice the real part of
    the interference term <a*(t+delta) a*(t+tau) a(t+delta+tau) a(t)>,
    divided by 4 <I>^2. Terms carrying a net dither phase are already dropped.
    """
    k = delay_in_samples(delta, trace.dt)
    lags = lags_to_samples(tau_grid, trace.dt)
    max_lag = int(np.max(np.abs(lags))) if lags.size else 0
    if trace.n < ORACLE_MIN_LENGTH_FACTOR * (k + max_lag):
        raise ParameterValidationError(
            f"trace of {trace.n} samples shorter than {ORACLE_MIN_LENGTH_FACTOR}*(delta + max tau) samples"
        )

    a = trace.samples
    intensity = trace.intensity
    mean_sq = intensity.mean() ** 2
    out = np.empty(lags.size)
    for i, m in enumerate(lags):
        offsets = (0, int(m), k, k + int(m))
        start = -min(offsets)
        stop = trace.n - max(offsets)
        t = slice(start, stop)

        def at(offset):
            return slice(start + offset, stop + offset)

        same_arm = intensity[at(k)] * intensity[at(k + m)] + intensity[t] * intensity[at(m)]
        cross_arm = intensity[t] * intensity[at(k + m)] + intensity[at(k)] * intensity[at(m)]
        interference = np.conj(a[at(k)]) * np.conj(a[at(m)]) * a[at(k + m)] * a[t]
        out[i] = np.mean(same_arm + cross_arm - 2 * interference.real) / (4 * mean_sq)
    return out
