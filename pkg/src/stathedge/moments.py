"""Expectations entering the hedging objective and the cost constraint.

Everything is reduced to one-dimensional integrals against the law of the
terminal log-price X1_T, using the conditional claim

    c_p(x) = E[Xi_T^p | X1_T = x],  p = 1, 2.

The law of X1_T is discretised by composite Gauss-Legendre with the log
strikes as panel edges, so every vanilla payoff is integrated without kink
error and grid functions such as z(K) stay smooth in K.  The Heston model
has no usable density; its discrete moments come from the transform module.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np
from scipy import stats

from . import heston as hx
from .density import ExpansionSpec, density_approx, exact_density, kernel_params
from .density.exact import cev_log_density
from .errors import (ConditioningError, InvalidArgument, RedundantInstrumentError,
                     UnsupportedModelError)
from .mc import McEstimate, default_scheme, estimate, simulate
from .models import ModelSpec, generator
from .payoffs import (ClaimSpec, ContinuousBand, CorrelatedCall, GenericEuropean,
                      GeometricAsianCall, InstrumentSet, LetfCall, vanilla_payoff)

EPS_FLOOR = 1e-12
SD_SPAN = 12.0


# ---------------------------------------------------------------------------
# marginal law of X1_T
# ---------------------------------------------------------------------------

@dataclass
class Law1D:
    """Quadrature for the law of X1_T: E[f(X1)] ~ sum(w * f(x)) + atom * f(-inf)."""

    x: np.ndarray
    w: np.ndarray
    pdf: Callable[[np.ndarray], np.ndarray]
    atom: float = 0.0

    def expect(self, values_at_nodes, value_at_atom: float = 0.0) -> float:
        return float(np.dot(self.w, values_at_nodes) + self.atom * value_at_atom)


def _composite_nodes(lo: float, hi: float, breakpoints, panels: int = 240, nodes: int = 10):
    bp = np.asarray([b for b in np.ravel(breakpoints) if lo < b < hi], float)
    edges = np.unique(np.concatenate([np.linspace(lo, hi, panels + 1), bp]))
    u, w = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * (u + 1) + a).ravel(), (0.5 * (b - a) * w).ravel()


def _base(model: ModelSpec) -> ModelSpec:
    return model.base or model


def _x1_scale(model: ModelSpec, measure: str, T: float) -> tuple[float, float]:
    base = _base(model)
    k = kernel_params(generator(base, measure), base.x0, base.x0, 0.0, T, base.time_homogeneous)
    return float(k.mean[0]), float(k.std[0])


def marginal_pdf(model: ModelSpec, measure: str, T: float, order: int = 2):
    """Density of X1_T and the mass at S = 0 (absorption)."""
    base = _base(model)
    tag = base.closed_form
    x0 = np.asarray(base.x0, float)
    if tag in ("Lognormal1D",) or (tag == "Gaussian2D" and model.base is None):
        ex = exact_density(base, measure, 0.0, x0, T)
        m, s = float(ex.mean[0]), float(np.sqrt(ex.covariance[0, 0]))
        return (lambda y: stats.norm.pdf(y, m, s)), 0.0
    if tag == "CevExact":
        p = base.params
        pdf, atom = cev_log_density(p["m"] if measure == "P" else 0.0, p["delta"], p["eta"],
                                    float(x0[0]), T)
        return pdf, atom
    if tag == "HestonJoint":
        raise UnsupportedModelError("Heston marginal density is not available; use the transform engine")
    if base.dim != 1:
        raise UnsupportedModelError("marginal density needs a 1D base model")
    dens = density_approx(base, measure, ExpansionSpec(order), 0.0, x0, T)
    return (lambda y: dens(np.asarray(y, float)[None, ...])), 0.0


def marginal_law(model: ModelSpec, measure: str, T: float, breakpoints=(), order: int = 2) -> Law1D:
    pdf, atom = marginal_pdf(model, measure, T, order)
    m, s = _x1_scale(model, measure, T)
    x, w = _composite_nodes(m - SD_SPAN * s, m + SD_SPAN * s, breakpoints)
    return Law1D(x, w * pdf(x), pdf, atom)


# ---------------------------------------------------------------------------
# conditional claims
# ---------------------------------------------------------------------------

def _gauss_call_moment(mean, var, kprime: float, power: int):
    """E[((e^Y - K')^+)^power] for Y ~ N(mean, var), vectorised over mean."""
    mean = np.asarray(mean, float)
    k = np.log(kprime)
    s = np.sqrt(var)
    out = np.zeros_like(mean)
    for j in range(power + 1):
        c = comb(power, j) * (-kprime) ** (power - j)
        if s > 0:
            tail = stats.norm.cdf((mean + j * var - k) / s)
        else:
            tail = (mean > k).astype(float)
        out = out + c * np.exp(j * mean + 0.5 * j * j * var) * tail
    return out


class ClaimLaw:
    """c_p(x) = E[Xi_T^p | X1_T = x] for a claim under a model."""

    def __init__(self, model: ModelSpec, claim: ClaimSpec, T: float, measure: str = "P",
                 order: int = 2, y_nodes: int = 160):
        self.model, self.claim, self.T, self.measure = model, claim, T, measure
        self.order = order
        self.y_nodes = y_nodes
        self.engine = self._setup()

    def _setup(self) -> str:
        model, claim = self.model, self.claim
        if isinstance(claim, GenericEuropean):
            return "payoff"
        if isinstance(claim, LetfCall):
            raise UnsupportedModelError("LETF claims are handled by the transform engine")
        if isinstance(claim, CorrelatedCall):
            if model.closed_form != "Gaussian2D" or model.base is not None:
                raise InvalidArgument("a correlated call needs the correlated GBM model")
        if isinstance(claim, GeometricAsianCall):
            if model.base is None:
                raise InvalidArgument("an Asian claim needs a running-average model")
        if model.closed_form == "Gaussian2D":
            ex = exact_density(model, self.measure, 0.0, model.x0, self.T)
            m, C = ex.mean, ex.covariance
            self._slope = C[0, 1] / C[0, 0]
            self._m = m
            self._cvar = C[1, 1] - C[0, 1] ** 2 / C[0, 0]
            return "conditional-gaussian"
        self._dens = density_approx(model, self.measure, ExpansionSpec(self.order), 0.0, model.x0, self.T)
        return f"expansion-N{self.order}"

    def cond(self, x, power: int = 1) -> np.ndarray:
        x = np.asarray(x, float)
        claim = self.claim
        if self.engine == "payoff":
            return claim.value(np.exp(x)) ** power
        if self.engine == "conditional-gaussian":
            mean = self._m[1] + self._slope * (x - self._m[0])
            return _gauss_call_moment(mean, self._cvar, claim.kprime, power)
        return self._ratio(x, power)

    def _ratio(self, x, power):
        """int h^p Gamma(x, y) dy / int Gamma(x, y) dy on a y-grid around the kernel."""
        shape = np.shape(x)
        x = np.atleast_1d(x).ravel()
        dens = self._dens
        kp = dens.kernel
        C = kp.covariance
        slope = C[0, 1] / C[0, 0]
        csd = np.sqrt(C[1, 1] - C[0, 1] ** 2 / C[0, 0])
        k = np.log(self.claim.kprime)
        out = np.empty_like(x)
        u, wq = np.polynomial.legendre.leggauss(self.y_nodes // 2)
        for lo in range(0, x.size, 256):
            xs = x[lo:lo + 256]
            cm = kp.mean[1] + slope * (xs - kp.mean[0])
            a, b = cm - 10 * csd, cm + 10 * csd
            kk = np.clip(k, a, b)
            # two Gauss-Legendre panels split at the kink log K'
            y1 = 0.5 * (kk - a)[:, None] * (u + 1) + a[:, None]
            y2 = 0.5 * (b - kk)[:, None] * (u + 1) + kk[:, None]
            Y = np.concatenate([y1, y2], axis=1)
            W = np.concatenate([0.5 * (kk - a)[:, None] * wq, 0.5 * (b - kk)[:, None] * wq], axis=1)
            X = np.broadcast_to(xs[:, None], Y.shape)
            g = dens(np.stack([X, Y]))
            h = np.maximum(np.exp(Y) - self.claim.kprime, 0.0) ** power
            den = np.sum(W * g, axis=1)
            if np.any(den <= EPS_FLOOR):
                den = np.maximum(den, EPS_FLOOR)
            out[lo:lo + 256] = np.sum(W * g * h, axis=1) / den
        return out.reshape(shape)


def conditional_claim(model: ModelSpec, claim: ClaimSpec, K, T: float, order: int = 2):
    """E[Xi_T | S_T = K]."""
    K = np.asarray(K, float)
    if np.any(K <= 0):
        raise InvalidArgument("strike must be positive")
    out = ClaimLaw(model, claim, T, "P", order).cond(np.log(K))
    return out if np.ndim(out) else float(out)


def density_ratio(model: ModelSpec, K, T: float, order: int = 2):
    """Gamma_tilde(K) / Gamma(K) for S_T (equal to the ratio of log-price densities)."""
    y = np.log(np.asarray(K, float))
    p, _ = marginal_pdf(model, "P", T, order)
    q, _ = marginal_pdf(model, "Q", T, order)
    pp = np.asarray(p(y), float)
    if np.any(pp < EPS_FLOOR):
        warnings.warn("density below floor in ratio; floor applied", stacklevel=2)
    out = np.asarray(q(y), float) / np.maximum(pp, EPS_FLOOR)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# discrete moments
# ---------------------------------------------------------------------------

@dataclass
class DiscreteMoments:
    psi: np.ndarray
    gamma: np.ndarray
    ztilde: np.ndarray
    labels: list
    strikes: np.ndarray
    xi: float
    xi2: float
    s0: float
    instruments: InstrumentSet
    engines: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.gamma)

    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.psi)
        except np.linalg.LinAlgError:
            raise RedundantInstrumentError(_redundancy_message(self.psi, self.labels)) from None


def _redundancy_message(psi, labels) -> str:
    d = np.sqrt(np.clip(np.diag(psi), 1e-300, None))
    corr = psi / np.outer(d, d)
    np.fill_diagonal(corr, 0.0)
    i, j = np.unravel_index(np.argmax(np.abs(corr)), corr.shape)
    i, j = sorted((int(i), int(j)))
    return (f"redundant hedging instruments: {labels[i]} and {labels[j]} "
            f"(correlation {corr[i, j]:.12f}); psi is not positive definite")


def _check_duplicates(inst: InstrumentSet):
    k = np.asarray(inst.strikes.strikes)
    dup = np.nonzero(np.diff(k) == 0)[0]
    if dup.size:
        i = int(dup[0])
        labels = inst.instrument_labels()
        off = int(inst.includes_bond) + int(inst.includes_forward)
        raise RedundantInstrumentError(
            f"redundant hedging instruments: {labels[off + i]} and {labels[off + i + 1]} "
            f"share strike {k[i]:g}")


def discrete_moments(model: ModelSpec, instruments: InstrumentSet, claim: ClaimSpec, T: float,
                     order: int = 2) -> DiscreteMoments:
    if not instruments.is_discrete:
        raise InvalidArgument("discrete_moments needs discrete strikes")
    if not instruments.instrument_labels():
        raise InvalidArgument("instrument set is empty")
    _check_duplicates(instruments)
    if _base(model).closed_form == "HestonJoint":
        mom = _heston_discrete(model, instruments, claim, T)
    else:
        mom = _density_discrete(model, instruments, claim, T, order)
    mom.cholesky()
    return mom


def _density_discrete(model, inst: InstrumentSet, claim, T, order) -> DiscreteMoments:
    s0 = inst.s0
    ks = np.asarray(inst.strikes.strikes, float)
    bps = np.log(np.concatenate([ks, [s0]]))
    lawp = marginal_law(model, "P", T, bps, order)
    lawq = marginal_law(model, "Q", T, bps, order)
    cl = ClaimLaw(model, claim, T, "P", order)
    Zp = inst.terminal_values(np.exp(lawp.x))
    Zq = inst.terminal_values(np.exp(lawq.x))
    z0 = inst.terminal_values(np.zeros(1))[:, 0]
    c1, c2 = cl.cond(lawp.x, 1), cl.cond(lawp.x, 2)
    at1 = float(claim.value(0.0)) if isinstance(claim, GenericEuropean) else 0.0
    psi = (Zp * lawp.w) @ Zp.T + lawp.atom * np.outer(z0, z0)
    gamma = Zp @ (lawp.w * c1) + lawp.atom * z0 * at1
    zt = Zq @ lawq.w + lawq.atom * z0
    xi = lawp.expect(c1, at1)
    xi2 = lawp.expect(c2, at1**2)
    eng = {"psi": "density-quadrature", "ztilde": "density-quadrature",
           "gamma": cl.engine, "xi2": cl.engine}
    return DiscreteMoments(0.5 * (psi + psi.T), gamma, zt, inst.instrument_labels(), ks, xi, xi2,
                           s0, inst, eng)


def _heston_discrete(model, inst: InstrumentSet, claim, T) -> DiscreteMoments:
    if not isinstance(claim, LetfCall):
        raise UnsupportedModelError("Heston discrete moments are implemented for LETF calls only")
    s0 = inst.s0
    ks = list(inst.strikes.strikes)
    cp = hx.joint_cmgf(model, T, "P")
    cq = hx.joint_cmgf(model, T, "Q")
    x1 = cp.params.x1
    gs = [hx.vanilla_pieces(K, s0) for K in ks]
    n_k = len(ks)
    m = hx.letf_moments(cp, claim.ell, claim.kprime, claim.l0, ks, s0)
    le, th = hx.letf_exponents(claim.ell)
    H = hx.letf_pieces(claim.ell, claim.kprime, claim.l0, x1)
    fwd_h = (hx.expect_w(cp, H, le, th, -1.5, x_exp=1.0) - s0 * m["h"]) if inst.includes_forward else 0.0
    engine = "fourier-laplace"
    ES = float(cp(-1j, 0.0).real)
    ES2 = float(cp(-2j, 0.0).real)
    rows = []
    if inst.includes_bond:
        rows.append("bond")
    if inst.includes_forward:
        rows.append("forward")
    n = len(rows) + n_k
    psi = np.zeros((n, n))
    gamma = np.zeros(n)
    zt = np.zeros(n)
    off = len(rows)
    psi[off:, off:] = m["gg"]
    gamma[off:] = m["gh"]
    zt[off:] = [hx.expect_x(cq, g) for g in gs]
    r = 0
    if inst.includes_bond:
        psi[0, 0] = 1.0
        psi[0, off:] = psi[off:, 0] = m["g"]
        gamma[0] = m["h"]
        zt[0] = 1.0
        r += 1
    if inst.includes_forward:
        f = r
        psi[f, f] = ES2 - 2 * s0 * ES + s0**2
        if inst.includes_bond:
            psi[0, f] = psi[f, 0] = ES - s0
        for i, g in enumerate(gs):
            psi[f, off + i] = psi[off + i, f] = hx.expect_x(cp, g * hx.PiecewiseExp(
                ((1.0, 1.0, -np.inf, np.inf),))) - s0 * m["g"][i]
        gamma[f] = fwd_h
        zt[f] = 0.0
    eng = {"psi": "fourier", "ztilde": "fourier", "gamma": engine, "xi2": engine}
    return DiscreteMoments(psi, gamma, zt, inst.instrument_labels(), np.asarray(ks), m["h"], m["h2"],
                           s0, inst, eng)


# ---------------------------------------------------------------------------
# continuous moments
# ---------------------------------------------------------------------------

@dataclass
class ContinuousMoments:
    K: np.ndarray
    s0: float
    beta: float
    Sigma: float
    xi: float
    theta: float
    xi2: float
    z: np.ndarray
    y: np.ndarray
    ztilde: np.ndarray
    gamma: np.ndarray
    Gamma: np.ndarray
    Gamma_tilde: np.ndarray
    cond: np.ndarray
    ratio: np.ndarray
    law: Law1D = field(repr=False)
    floor_hits: int = 0
    engines: dict = field(default_factory=dict)

    def payoff_matrix(self) -> np.ndarray:
        """g(K_i, S) at the law's nodes, shape (grid, nodes)."""
        return np.asarray(vanilla_payoff(self.K[:, None], np.exp(self.law.x)[None, :], self.s0))

    def psi_matrix(self) -> np.ndarray:
        """psi(K, K') = E[g(K, S_T) g(K', S_T)] on the strike grid."""
        G = self.payoff_matrix()
        g0 = np.asarray(vanilla_payoff(self.K, 0.0, self.s0))
        return (G * self.law.w) @ G.T + self.law.atom * np.outer(g0, g0)

    def columns(self) -> dict:
        return {"K": self.K, "z": self.z, "y": self.y, "ztilde": self.ztilde, "gamma": self.gamma,
                "Gamma": self.Gamma, "Gamma_tilde": self.Gamma_tilde, "cond_claim": self.cond}


def continuous_moments(model: ModelSpec, band: ContinuousBand | InstrumentSet, claim: ClaimSpec,
                       T: float, s0: float | None = None, order: int = 2) -> ContinuousMoments:
    if isinstance(band, InstrumentSet):
        s0 = band.s0
        band = band.strikes
    if not isinstance(band, ContinuousBand):
        raise InvalidArgument("continuous_moments needs a continuous band")
    if s0 is None:
        s0 = float(np.exp(_base(model).x0[0]))
    if band.grid_size < 51:
        raise InvalidArgument("continuous band needs at least 51 grid points")
    if not (band.L < s0 < band.R) or band.L <= 0:
        raise InvalidArgument("need 0 < L < S0 < R")
    if _base(model).closed_form == "HestonJoint":
        raise UnsupportedModelError("continuous strikes are not supported for the Heston model")
    K = band.grid()
    bps = np.log(np.concatenate([K, [s0]]))
    lawp = marginal_law(model, "P", T, bps, order)
    lawq = marginal_law(model, "Q", T, bps, order)
    cl = ClaimLaw(model, claim, T, "P", order)
    S = np.exp(lawp.x)
    c1, c2 = cl.cond(lawp.x, 1), cl.cond(lawp.x, 2)
    at1 = float(claim.value(0.0)) if isinstance(claim, GenericEuropean) else 0.0
    G = np.asarray(vanilla_payoff(K[:, None], S[None, :], s0))
    Gq = np.asarray(vanilla_payoff(K[:, None], np.exp(lawq.x)[None, :], s0))
    g0 = np.asarray(vanilla_payoff(K, 0.0, s0))
    z = G @ lawp.w + lawp.atom * g0
    y = G @ (lawp.w * (S - s0)) + lawp.atom * g0 * (-s0)
    zt = Gq @ lawq.w + lawq.atom * g0
    gamma = G @ (lawp.w * c1) + lawp.atom * g0 * at1
    beta = lawp.expect(S - s0, -s0)
    Sigma = lawp.expect((S - s0) ** 2, s0**2)
    xi = lawp.expect(c1, at1)
    theta = lawp.expect((S - s0) * c1, -s0 * at1)
    xi2 = lawp.expect(c2, at1**2)
    px = np.asarray(lawp.pdf(np.log(K)), float)
    qx = np.asarray(lawq.pdf(np.log(K)), float)
    if np.any(px <= 0) or np.any(qx <= 0):
        raise ConditioningError("nonpositive density on the strike grid")
    hits = int(np.sum(px < EPS_FLOOR))
    if hits > 0.05 * len(K):
        warnings.warn(f"density below floor on {hits} of {len(K)} strikes: band too wide", stacklevel=2)
    ratio = qx / np.maximum(px, EPS_FLOOR)
    cond = cl.cond(np.log(K), 1)
    eng = {"grid": "density-quadrature", "cond": cl.engine}
    return ContinuousMoments(K, s0, beta, Sigma, xi, theta, xi2, z, y, zt, gamma, px / K, qx / K,
                             cond, ratio, lawp, hits, eng)


# ---------------------------------------------------------------------------
# Monte Carlo check
# ---------------------------------------------------------------------------

def mc_check(model: ModelSpec, functional: Callable, paths: int, seed: int, T: float,
             measure: str = "P", steps_per_year: int = 250, workers: int = 1) -> McEstimate:
    """MC estimate of E[functional(records)] for comparison with the engines above."""
    if paths < 1000:
        raise InvalidArgument("mc_check needs at least 1000 paths")
    batch = simulate(model, measure, default_scheme(model, steps_per_year), paths, seed, T, workers)
    return estimate(batch, functional)
