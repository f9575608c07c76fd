"""Location-scale Student-T negative log-likelihood and its derivatives.

Raw head outputs are constrained as nu = 2 + softplus(raw_nu) and
sigma = softplus(raw_sigma) + 1e-6, so the predictive distribution always has
finite variance and positive scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln

from ..errors import NumericError

SIGMA_FLOOR = 1e-6
NU_OFFSET = 2.0


@dataclass(frozen=True)
class StudentTParams:
    nu: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(self.sigma <= 0):
            raise NumericError("StudentTParams requires sigma > 0")
        if np.any(self.nu <= 2):
            raise NumericError("StudentTParams requires nu > 2")


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def constrain(raw_nu, raw_mu, raw_sigma) -> StudentTParams:
    return StudentTParams(
        nu=NU_OFFSET + softplus(np.asarray(raw_nu, dtype=float)),
        mu=np.asarray(raw_mu, dtype=float),
        sigma=softplus(np.asarray(raw_sigma, dtype=float)) + SIGMA_FLOOR,
    )


def log_density(y, nu, mu, sigma) -> np.ndarray:
    """log f_T(y; nu, mu, sigma) for the location-scale Student-T."""
    y = np.asarray(y, dtype=float)
    z = (y - mu) / sigma
    return (gammaln((nu + 1) / 2) - gammaln(nu / 2)
            - 0.5 * np.log(nu * np.pi) - np.log(sigma)
            - (nu + 1) / 2 * np.log1p(z * z / nu))


def nll_loss(pred: StudentTParams, target, mask=None) -> float:
    """Mean NLL over unmasked positions."""
    target = np.asarray(target, dtype=float)
    ll = log_density(target, pred.nu, pred.mu, pred.sigma)
    if mask is None:
        return float(-np.mean(ll))
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return 0.0
    return float(-(ll * mask).sum() / count)


def student_t_nll(y, nu, mu, sigma) -> np.ndarray:
    """Pointwise NLL; exposed for tests and external scoring."""
    return -log_density(y, np.asarray(nu, float), np.asarray(mu, float),
                        np.asarray(sigma, float))


def nll_grads(pred: StudentTParams, target, mask=None):
    """Pointwise derivative arrays of the mean NLL w.r.t. nu, mu, sigma.

    Padded positions (mask False) get exactly zero gradient; the division by
    the unmasked count is already applied.
    """
    y = np.asarray(target, dtype=float)
    nu, mu, sigma = pred.nu, pred.mu, pred.sigma
    z = (y - mu) / sigma
    denom = nu + z * z
    dll_dmu = (nu + 1) * z / (denom * sigma)
    dll_dsigma = -1.0 / sigma + (nu + 1) * z * z / (denom * sigma)
    dll_dnu = 0.5 * (digamma((nu + 1) / 2) - digamma(nu / 2) - 1.0 / nu
                     - np.log1p(z * z / nu) + (nu + 1) * z * z / (nu * denom))
    if mask is None:
        count = y.size
        scale = -1.0 / count
        return scale * dll_dnu, scale * dll_dmu, scale * dll_dsigma
    mask = np.asarray(mask, dtype=bool)
    count = max(int(mask.sum()), 1)
    scale = np.where(mask, -1.0 / count, 0.0)
    return scale * dll_dnu, scale * dll_dmu, scale * dll_dsigma


def chain_to_raw(pred: StudentTParams, d_nu, d_mu, d_sigma, raw_nu, raw_sigma):
    """Chain parameter-space gradients back to the unconstrained head outputs."""
    return d_nu * expit(raw_nu), d_mu, d_sigma * expit(raw_sigma)
