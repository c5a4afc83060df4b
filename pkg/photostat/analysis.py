"""Weighted least-squares fits of correlation histograms and source classification.

Fits use lmfit (Levenberg-Marquardt, ``leastsq``) with residuals weighted
by the per-bin standard error; parameter uncertainties come from the
covariance at the optimum.
"""

import logging
from typing import Callable, Dict, List, Literal, Optional

import numpy as np
from lmfit import Parameters, minimize
from pydantic import BaseModel, Field

from . import models
from .correlator import CorrelationHistogram
from .errors import InsufficientStatisticsError, NonConvergenceError, ParameterValidationError
from .logging_utils import track_step

logger = logging.getLogger(__name__)

MIN_FIT_BINS = 20
MIN_BIN_COUNTS = 100
MAX_NFEV = 5000
# CoherentAM fits keep tau_amp at least this many tau_c_eff
MIN_AMP_TO_COHERENCE_RATIO = 3.0
# Competing dip models closer than this in reduced chi-square are not separable
CHI2_SEPARATION = 0.10
DEFAULT_THRESHOLD_SIGMA = 3.0

Verdict = Literal["Chaotic", "CoherentAM", "Mixture", "Inconclusive"]


class FitReport(BaseModel):
    """Result of a g2 or g2x fit."""
    model: str = Field(description="Fitted model kind")
    params: Dict[str, float] = Field(default_factory=dict, description="Best-fit parameter values")
    sigmas: Dict[str, Optional[float]] = Field(default_factory=dict, description="1-sigma uncertainties")
    chi2_reduced: float = Field(ge=0, description="Reduced chi-square of the selected model")
    verdict: Optional[Verdict] = Field(default=None, description="Source class (g2x fits only)")
    evidence: Dict[str, Optional[float]] = Field(default_factory=dict, description="dip_depth, background_excess and their sigmas")
    alternatives: Dict[str, float] = Field(default_factory=dict, description="Reduced chi-square of every candidate model")
    candidates: Dict[str, Dict[str, float]] = Field(default_factory=dict, description="Best-fit parameters of every candidate model")
    delta: Optional[float] = Field(default=None, description="Interferometric delay the fit assumed")
    config_hash: Optional[str] = Field(default=None, description="Hash of the configuration that produced the data")
    tau: List[float] = Field(default_factory=list, description="Fitted bin centers")
    residuals: List[float] = Field(default_factory=list, description="Normalized residuals (data - model)/sigma")

    def to_json(self, indent: int = 2) -> str:
        """Serialized report without the residual trace."""
        return self.model_dump_json(indent=indent, exclude={"tau", "residuals"})


# -- generic fitting -----------------------------------------------------------

def _select_bins(h: CorrelationHistogram, mask: np.ndarray):
    counts = h.counts[mask]
    populated = int(np.count_nonzero(counts > MIN_BIN_COUNTS))
    if populated < MIN_FIT_BINS:
        raise InsufficientStatisticsError(
            f"only {populated} bins with more than {MIN_BIN_COUNTS} counts in the fit window (need {MIN_FIT_BINS})",
            {"populated_bins": populated},
        )
    keep = mask & (h.counts > 0)
    return h.tau[keep], h.g2[keep], h.sigma[keep]


def _fit_curve(name: str, tau, y, sigma, func: Callable, params: Parameters):
    """Minimize (y - func(tau, **params)) / sigma. Returns (values, stderrs, chi2_reduced, residuals)."""
    free = [p for p in params.values() if p.vary and p.expr is None]
    if not free:
        values = {k: p.value for k, p in params.items()}
        residual = (y - func(tau, **values)) / sigma
        dof = max(1, residual.size)
        return values, {k: 0.0 for k in values}, float(np.sum(residual ** 2) / dof), residual

    def residual_fn(p):
        return (y - func(tau, **p.valuesdict())) / sigma

    result = minimize(residual_fn, params, method="leastsq", max_nfev=MAX_NFEV)
    if not result.success:
        raise NonConvergenceError(
            f"{name} fit did not converge: {result.message}",
            {"nfev": result.nfev, "message": str(result.message),
             "last_values": result.params.valuesdict()},
        )
    values = result.params.valuesdict()
    stderrs = {k: (float(p.stderr) if p.stderr is not None else None) for k, p in result.params.items()}
    return values, stderrs, float(result.redchi), result.residual


def _excess_moments(tau, y):
    """Area and rms width of g2 - 1 (positive part), for starting values."""
    excess = np.clip(y - 1.0, 0.0, None)
    width = np.median(np.diff(np.sort(tau))) if tau.size > 1 else 1.0
    area = float(excess.sum() * width)
    if area <= 0:
        return 0.0, float(np.ptp(tau) / 10 or 1.0)
    rms = float(np.sqrt(np.sum(excess * tau ** 2) / excess.sum()))
    return area, max(rms, width / 2)


def _g2_parameters(kind, tau, y, bin_width, resolution_sigma):
    area, rms = _excess_moments(tau, y)
    peak = float(max(np.max(y) - 1.0, 1e-3))
    floor = bin_width / 100
    params = Parameters()
    if kind == "chaotic_siegert":
        params.add("tau_c", value=max(area, floor * 10), min=floor)
        params.add("resolution_sigma", value=rms if resolution_sigma is None else resolution_sigma,
                   min=0.0, vary=resolution_sigma is None)
    elif kind == "coherent_am":
        params.add("alpha", value=peak, min=0.0)
        params.add("tau_amp", value=max(area / peak, floor * 10), min=floor)
        params.add("resolution_sigma", value=resolution_sigma or 0.0, min=0.0, vary=False)
    elif kind == "gaussian":
        params.add("amplitude", value=peak, min=0.0)
        params.add("sigma", value=max(area / (peak * np.sqrt(2 * np.pi)), floor * 10), min=floor)
    else:
        raise ParameterValidationError(f"Unknown g2 model {kind!r}; choose from {sorted(models.G2_MODELS)}")
    return params


@track_step("fit_g2")
def fit_g2(h: CorrelationHistogram, kind: str, fit_window: Optional[float] = None,
           resolution_sigma: Optional[float] = None) -> FitReport:
    """Fit an autocorrelation histogram with one g2 model.

    kind: "chaotic_siegert" (tau_c, resolution_sigma), "coherent_am"
    (alpha, tau_amp; resolution fixed at ``resolution_sigma``) or "gaussian"
    (amplitude, sigma).
    """
    window = fit_window or h.window
    tau, y, sigma = _select_bins(h, np.abs(h.tau) <= window)
    params = _g2_parameters(kind, tau, y, h.bin_width, resolution_sigma)
    values, stderrs, chi2r, residual = _fit_curve(kind, tau, y, sigma, models.G2_MODELS[kind], params)
    logger.info(f"   {kind}: {values} (chi2_red={chi2r:.3f})")
    return FitReport(
        model=kind,
        params=values,
        sigmas=stderrs,
        chi2_reduced=chi2r,
        alternatives={kind: chi2r},
        candidates={kind: values},
        delta=h.delta,
        tau=tau.tolist(),
        residuals=np.asarray(residual).tolist(),
    )


def predict_g2x(g2_report: FitReport, delta: float, tau, tau_c: Optional[float] = None) -> np.ndarray:
    """Cross-correlation curve, replicas included, from the parameters of a g2 fit.

    A ``gaussian`` fit is read as resolution-limited chaotic bunching, so its
    interference term is minus half the fitted excess and ``tau_c`` is not needed.
    """
    p = g2_report.params
    tau = np.asarray(tau, dtype=float)
    if g2_report.model == "gaussian":
        def g2(t):
            return models.g2_gaussian(t, p["amplitude"], p["sigma"])

        return (2 * g2(tau) + g2(tau + delta) + g2(tau - delta)) / 4 - (g2(tau) - 1.0) / 2
    if g2_report.model == "chaotic_siegert":
        sigma = p.get("resolution_sigma", 0.0)
        tau_c = tau_c or p["tau_c"]

        def g2(t):
            return models.g2_chaotic_siegert(t, p["tau_c"], sigma)
    elif g2_report.model == "coherent_am":
        if tau_c is None:
            raise ParameterValidationError("predicting g2x from a coherent_am fit needs tau_c")
        sigma = p.get("resolution_sigma", 0.0)

        def g2(t):
            return models.g2_coherent_am(t, p["alpha"], p["tau_amp"], sigma)
    else:
        raise ParameterValidationError(f"cannot predict g2x from a {g2_report.model} fit")
    return models.g2x_from_g2(tau, delta, g2, tau_c, sigma)


# -- cross-correlation -----------------------------------------------------------

def _weighted_mean(y, sigma):
    if y.size == 0:
        return 0.0, float("inf")
    w = 1.0 / sigma ** 2
    return float(np.sum(w * y) / np.sum(w)), float(1.0 / np.sqrt(np.sum(w)))


def _central_value(h: CorrelationHistogram, center: float):
    """Weighted mean and error of the bins adjacent to ``center``."""
    near = np.abs(h.tau - center) < h.bin_width
    return _weighted_mean(h.g2[near], h.sigma[near])


def _core_mask(h: CorrelationHistogram, delta: float) -> np.ndarray:
    """Bins around tau = 0 with the replica zones around +/- delta cut out.

    For short delays the region is widened past the replicas so the fit
    keeps at least 2 * MIN_FIT_BINS bins.
    """
    extent = min(h.window, max(delta / 2, 2 * MIN_FIT_BINS * h.bin_width))
    guard = max(delta / 2, 4 * h.bin_width)
    a = np.abs(h.tau)
    replica_zone = (a >= delta / 2) & (a < delta + guard)
    return (a <= extent) & ~replica_zone


def _g2x_candidates(tau, y, sigma, delta, bin_width, resolution_sigma):
    dip_width = max(bin_width, float(np.median(np.abs(tau[y < 1 - 0.5 * (1 - y.min())])) * 2)
                    if y.min() < 1 else bin_width * 5)
    dip_width = min(dip_width, delta / 2)
    floor = bin_width / 10
    dip_depth = max(1.0 - float(y.min()), 0.0)

    coherent = Parameters()
    coherent.add("tau_c_eff", value=dip_width, min=floor, max=delta)
    coherent.add("ratio", value=10.0, min=MIN_AMP_TO_COHERENCE_RATIO)
    coherent.add("tau_amp", expr="ratio*tau_c_eff")
    coherent.add("alpha", value=max(1.0 - 2 * dip_depth, 0.05) if dip_depth > 0.25 else 0.3, min=0.0, max=5.0)
    coherent.add("resolution_sigma", value=resolution_sigma, vary=False)

    mixture = Parameters()
    mixture.add("x", value=min(max(2 * dip_depth, 0.05), 1.0), min=0.0, max=1.0)
    mixture.add("tau_c_eff", value=dip_width, min=floor, max=delta)
    mixture.add("resolution_sigma", value=resolution_sigma, vary=False)

    def coherent_fn(t, tau_c_eff, ratio, tau_amp, alpha, resolution_sigma):
        return models.G2X_MODELS["CoherentAM"](t, alpha, tau_amp, tau_c_eff, resolution_sigma)

    starts = {"Chaotic": Parameters(), "CoherentAM": coherent, "Mixture": mixture}
    wrappers = {"CoherentAM": coherent_fn}
    return {name: (wrappers.get(name, func), starts[name]) for name, func in models.G2X_MODELS.items()}


def _shoulder_excess(h: CorrelationHistogram, delta: float, tau_c_eff: float, tau_amp: Optional[float]):
    start = max(3 * tau_c_eff, 2 * h.bin_width)
    stop = delta / 4
    if tau_amp is not None and tau_amp > 0:
        stop = min(stop, max(tau_amp, start + 4 * h.bin_width))
    region = (np.abs(h.tau) >= start) & (np.abs(h.tau) <= stop) & (h.counts > 0)
    mean, err = _weighted_mean(h.g2[region] - 1.0, h.sigma[region])
    return mean, err, start, stop


@track_step("fit_g2x")
def fit_g2x(h: CorrelationHistogram, delta: float, resolution_sigma: float = 0.0,
            threshold_sigma: float = DEFAULT_THRESHOLD_SIGMA) -> FitReport:
    """Fit the Chaotic, CoherentAM and Mixture models around tau = 0 and classify.

    The replicas at +/- delta are cut out of the core fit (see
    ``_core_mask``) and measured separately as ``replica_height``.
    """
    if delta <= 0:
        raise ParameterValidationError("fit_g2x needs a positive interferometric delay")
    tau, y, sigma = _select_bins(h, _core_mask(h, delta))

    alternatives, candidates, fits = {}, {}, {}
    for name, (func, params) in _g2x_candidates(tau, y, sigma, delta, h.bin_width, resolution_sigma).items():
        values, stderrs, chi2r, residual = _fit_curve(name, tau, y, sigma, func, params)
        alternatives[name] = chi2r
        candidates[name] = values
        fits[name] = (values, stderrs, chi2r, residual)
        logger.info(f"   {name}: chi2_red={chi2r:.3f} {values}")

    best = min(alternatives, key=alternatives.get)
    values, stderrs, chi2r, residual = fits[best]

    dip_value, dip_sigma = _central_value(h, 0.0)
    dip_model = min(("CoherentAM", "Mixture"), key=alternatives.get)
    tau_c_eff = candidates[dip_model]["tau_c_eff"]
    background, background_sigma, start, stop = _shoulder_excess(
        h, delta, tau_c_eff, candidates["CoherentAM"].get("tau_amp"))

    replicas = [_central_value(h, c) for c in (-delta, delta) if abs(c) + h.bin_width < h.window]
    replica_height = float(np.mean([v for v, _ in replicas]) - 1.0) if replicas else None

    report = FitReport(
        model=best,
        params=values,
        sigmas=stderrs,
        chi2_reduced=chi2r,
        alternatives=alternatives,
        candidates=candidates,
        delta=delta,
        evidence={
            "dip_value": dip_value,
            "dip_depth": 1.0 - dip_value,
            "dip_sigma": dip_sigma,
            "background_excess": background,
            "background_sigma": background_sigma,
            "background_start": start,
            "background_stop": stop,
            "replica_height": replica_height,
            "x_from_dip": 2 * (1.0 - dip_value),
        },
        tau=tau.tolist(),
        residuals=np.asarray(residual).tolist(),
    )
    report.verdict = classify(report, threshold_sigma=threshold_sigma)
    return report


def classify(g2x_fit: FitReport, threshold_sigma: float = DEFAULT_THRESHOLD_SIGMA) -> Verdict:
    """Chaotic / CoherentAM / Mixture / Inconclusive from dip depth D and background excess B.

    No dip and no excess -> Chaotic; dip on a raised background -> CoherentAM;
    dip on a flat background -> Mixture (x = 2D). When a dip is present but
    the CoherentAM and Mixture fits are within 10% in reduced chi-square the
    data cannot tell them apart and the verdict is Inconclusive.
    """
    ev = g2x_fit.evidence
    dip = ev.get("dip_depth") or 0.0
    dip_sigma = ev.get("dip_sigma")
    excess = ev.get("background_excess") or 0.0
    excess_sigma = ev.get("background_sigma")

    has_dip = dip_sigma is not None and np.isfinite(dip_sigma) and dip > threshold_sigma * dip_sigma
    has_excess = (excess_sigma is not None and np.isfinite(excess_sigma)
                  and excess > threshold_sigma * excess_sigma)

    if not has_dip and not has_excess:
        return "Chaotic"
    if not has_dip:
        return "Inconclusive"

    chi_coherent = g2x_fit.alternatives.get("CoherentAM")
    chi_mixture = g2x_fit.alternatives.get("Mixture")
    if chi_coherent is not None and chi_mixture is not None:
        spread = abs(chi_coherent - chi_mixture) / max(min(chi_coherent, chi_mixture), 1e-12)
        if spread < CHI2_SEPARATION:
            return "Inconclusive"
    return "CoherentAM" if has_excess else "Mixture"
