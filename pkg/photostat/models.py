"""Analytic g2 / g2x model library.

All models are written for a strongly unbalanced interferometer
(delta much longer than tau_c) and optionally convolved with a Gaussian
timing resolution of standard deviation ``resolution_sigma``.
"""

import numpy as np
from scipy.special import erfc, erfcx

_SQRT2 = np.sqrt(2.0)


def exp_conv_gauss(tau, decay, resolution_sigma=0.0):
    """exp(-|tau|/decay) convolved with a unit-area Gaussian of std resolution_sigma.

    Closed form through the scaled complementary error function, stable for
    any ratio of resolution to decay time. Peak value is <= 1.
    """
    t = np.abs(np.asarray(tau, dtype=float))
    if resolution_sigma <= 0:
        return np.exp(-t / decay)
    s = resolution_sigma / decay
    a = (s - t / resolution_sigma) / _SQRT2
    b = (s + t / resolution_sigma) / _SQRT2
    g = np.exp(-t ** 2 / (2 * resolution_sigma ** 2))
    with np.errstate(over="ignore", invalid="ignore"):
        rising = np.where(a >= 0, g * erfcx(np.maximum(a, 0.0)), np.exp(s ** 2 / 2 - t / decay) * erfc(a))
    return 0.5 * (rising + g * erfcx(b))


# -- autocorrelation g2(tau) --------------------------------------------------

def g2_chaotic_siegert(tau, tau_c, resolution_sigma=0.0):
    """Siegert relation with Lorentzian spectrum: 1 + exp(-2|tau|/tau_c)."""
    return 1.0 + exp_conv_gauss(tau, tau_c / 2, resolution_sigma)


def g2_coherent_am(tau, alpha, tau_amp, resolution_sigma=0.0):
    """Coherent field with Lorentzian RIN: 1 + alpha exp(-2|tau|/tau_amp)."""
    return 1.0 + alpha * exp_conv_gauss(tau, tau_amp / 2, resolution_sigma)


def g2_mixture(tau, x, tau_c, resolution_sigma=0.0):
    """Statistical mixture of coherent (weight x) and chaotic light."""
    return 1.0 + (1.0 - x) * exp_conv_gauss(tau, tau_c / 2, resolution_sigma)


def g2_gaussian(tau, amplitude, sigma, center=0.0):
    """Resolution-limited peak on a unit background."""
    tau = np.asarray(tau, dtype=float)
    return 1.0 + amplitude * np.exp(-(tau - center) ** 2 / (2 * sigma ** 2))


# -- cross-correlation g2x(tau, delta) near tau = 0 ----------------------------

def g2x_chaotic(tau):
    """Interference terms cancel the Siegert term exactly: flat 1."""
    return np.ones_like(np.asarray(tau, dtype=float))


def g2x_coherent_am(tau, alpha, tau_amp, tau_c_eff, resolution_sigma=0.0):
    """Narrow dip down to (1 + alpha)/2 dug into a broad peak of height alpha/2."""
    return (1.0 - 0.5 * exp_conv_gauss(tau, tau_c_eff / 2, resolution_sigma)
            + 0.5 * alpha * exp_conv_gauss(tau, tau_amp / 2, resolution_sigma))


def g2x_mixture(tau, x, tau_c_eff, resolution_sigma=0.0):
    """Dip down to 1 - x/2 on a flat background."""
    return 1.0 - 0.5 * x * exp_conv_gauss(tau, tau_c_eff / 2, resolution_sigma)


def g2x_from_g2(tau, delta, g2, tau_c, resolution_sigma=0.0):
    """Full six-term cross-correlation, replicas included, from an autocorrelation model.

    ``g2`` is a callable of tau. The four particle-like terms give
    (2 g2(tau) + g2(tau + delta) + g2(tau - delta)) / 4; for delta >> tau_c the
    two interference terms contribute -exp(-2|tau|/tau_c)/2 for all three
    source classes.
    """
    tau = np.asarray(tau, dtype=float)
    particle = (2 * g2(tau) + g2(tau + delta) + g2(tau - delta)) / 4
    return particle - 0.5 * exp_conv_gauss(tau, tau_c / 2, resolution_sigma)


G2_MODELS = {
    "chaotic_siegert": g2_chaotic_siegert,
    "coherent_am": g2_coherent_am,
    "gaussian": g2_gaussian,
}

G2X_MODELS = {
    "Chaotic": g2x_chaotic,
    "CoherentAM": g2x_coherent_am,
    "Mixture": g2x_mixture,
}
