"""Closed-form transition densities used as references for the expansion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special, stats

from ..errors import InvalidArgument, UnsupportedModelError
from ..models import ModelSpec


@dataclass
class ExactDensity:
    """Density of X_T in the model's state coordinates.

    ``atom`` is the probability of absorption at S = 0 (only CEV with
    eta < 1 has one); ``pdf`` then integrates to ``1 - atom``.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    dim: int
    atom: float = 0.0
    mean: np.ndarray | None = None
    covariance: np.ndarray | None = None

    def __call__(self, y):
        return self.pdf(y)


def _gaussian(mean, cov) -> ExactDensity:
    mean = np.atleast_1d(np.asarray(mean, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    d = len(mean)
    if d == 1:
        sd = np.sqrt(cov[0, 0])

        def pdf(y):
            y = np.asarray(y, float)
            if y.ndim >= 1 and y.shape[0] == 1:
                y = y[0]
            return stats.norm.pdf(y, mean[0], sd)
    else:
        mvn = stats.multivariate_normal(mean, cov)

        def pdf(y):
            y = np.asarray(y, float)
            return mvn.pdf(np.moveaxis(y, 0, -1))
    return ExactDensity(pdf, d, 0.0, mean, cov)


def cev_log_density(m: float, delta: float, eta: float, x: float, tau: float):
    """Density of log S_T and the absorption mass for dS = m S dt + delta S^eta dW."""
    if eta == 1.0:
        mu = x + (m - 0.5 * delta**2) * tau
        return (lambda y: stats.norm.pdf(np.asarray(y, float), mu, delta * np.sqrt(tau))), 0.0
    p = 2.0 * (1.0 - eta)
    if abs(m) < 1e-12:
        k = 2.0 / (delta**2 * p**2 * tau)
        growth = 1.0
    else:
        k = 2.0 * m / (delta**2 * p * np.expm1(p * m * tau))
        growth = np.exp(p * m * tau)
    s0 = np.exp(x)
    xx = k * s0**p * growth
    nu = 1.0 / p
    atom = float(special.gammaincc(nu, xx))

    def pdf(y):
        y = np.asarray(y, float)
        s = np.exp(y)
        w = k * s**p
        arg = 2.0 * np.sqrt(xx * w)
        # ive(nu, a) = iv(nu, a) e^{-a}; fold the scaling into the exponent
        logf = (np.log(p) + nu * np.log(k)
                + (np.log(xx) + (1.0 - 4.0 * eta) * np.log(w)) / (4.0 - 4.0 * eta)
                - xx - w + arg)
        fs = np.exp(logf) * special.ive(nu, arg)
        return fs * s

    return pdf, atom


def exact_density(model: ModelSpec, measure: str, t: float, x, T: float) -> ExactDensity:
    if not T > t:
        raise InvalidArgument("need T > t")
    if measure not in ("P", "Q"):
        raise InvalidArgument(f"unknown measure {measure!r}")
    x = np.asarray(x, float)
    tau = T - t
    p = model.params
    tag = model.closed_form
    if tag == "Lognormal1D":
        mu = p["mu"] if measure == "P" else 0.0
        return _gaussian([x[0] + (mu - 0.5 * p["sigma"] ** 2) * tau], [[p["sigma"] ** 2 * tau]])
    if tag == "Gaussian2D" and model.base is None:
        s1, s2, r = p["sigma1"], p["sigma2"], p["rho"]
        m1 = p["mu1"] if measure == "P" else 0.0
        m2 = p["mu2"] if measure == "P" else 0.0
        mean = [x[0] + (m1 - 0.5 * s1**2) * tau, x[1] + (m2 - 0.5 * s2**2) * tau]
        cov = np.array([[s1**2, r * s1 * s2], [r * s1 * s2, s2**2]]) * tau
        return _gaussian(mean, cov)
    if tag == "Gaussian2D":
        # log-price and running average of a GBM
        H = model.horizon
        sig = p["sigma"]
        b = (p["mu"] if measure == "P" else 0.0) - 0.5 * sig**2
        mean = [x[0] + b * tau, x[1] + (x[0] * tau + 0.5 * b * tau**2) / H]
        cov = sig**2 * np.array([[tau, tau**2 / (2 * H)], [tau**2 / (2 * H), tau**3 / (3 * H**2)]])
        return _gaussian(mean, cov)
    if tag == "CevExact":
        m = p["m"] if measure == "P" else 0.0
        pdf, atom = cev_log_density(m, p["delta"], p["eta"], float(x[0]), tau)

        def pdf1(y):
            y = np.asarray(y, float)
            if y.ndim >= 1 and y.shape[0] == 1:
                y = y[0]
            return pdf(y)
        return ExactDensity(pdf1, 1, atom)
    if tag == "HestonJoint":
        raise UnsupportedModelError("the Heston joint law is available through its transform only")
    raise UnsupportedModelError(f"no closed-form density for model {model.name!r}")
