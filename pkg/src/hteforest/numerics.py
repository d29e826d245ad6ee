"""Stable link-function primitives used by the likelihood families.

Logistic pieces delegate to scipy.special (stable for |z| > 30); the
minimum-extreme-value pieces are written to avoid overflow in exp.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit

# exp() overflows above ~709; cap arguments well below that so downstream
# products stay finite.
_EXP_CAP = 500.0


def softplus(z):
    """log(1 + exp(z)), elementwise, overflow-safe."""
    return np.logaddexp(0.0, z)


def logistic_cdf(z):
    return expit(z)


def logistic_logpdf(z):
    # f(z) = e^z / (1+e^z)^2; log f = z - 2*softplus(z)
    z = np.asarray(z, dtype=float)
    return z - 2.0 * softplus(z)


def logistic_pdf(z):
    return np.exp(logistic_logpdf(z))


def logistic_pdf_deriv(z):
    """f'(z) = f(z) (1 - 2 F(z)) for the logistic density."""
    return logistic_pdf(z) * (1.0 - 2.0 * expit(z))


def log_logistic_cdf(z):
    return log_expit(z)


def mev_cdf(z):
    """Minimum extreme value CDF, 1 - exp(-exp(z)) (inverse cloglog)."""
    z = np.asarray(z, dtype=float)
    return -np.expm1(-np.exp(np.minimum(z, _EXP_CAP)))


def mev_logpdf(z):
    z = np.asarray(z, dtype=float)
    return z - np.exp(np.minimum(z, _EXP_CAP))


def mev_pdf(z):
    return np.exp(mev_logpdf(z))


def mev_pdf_deriv(z):
    """f'(z) = f(z) (1 - exp(z)) for the minimum extreme value density."""
    z = np.asarray(z, dtype=float)
    return mev_pdf(z) * (1.0 - np.exp(np.minimum(z, _EXP_CAP)))


def clipped_exp(z):
    return np.exp(np.minimum(z, _EXP_CAP))
