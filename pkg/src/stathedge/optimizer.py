"""Optimal static quadratic hedges with an optional cost cap.

Discrete instruments: minimise pi' psi pi - 2 gamma' pi subject to
ztilde' pi <= C.  Continuous strikes: bond q, forward p and a strike density
pi(K) on [L, R], with the closed-form solution built from the conditional
claim c(K) and the density ratio Gamma_tilde / Gamma.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy import integrate, interpolate, linalg

from .errors import (DegenerateSystemError, GridError, InvalidArgument, NumericalError,
                     RedundantInstrumentError)
from .moments import ContinuousMoments, DiscreteMoments
from .payoffs import GenericEuropean, InstrumentSet, vanilla_payoff


@dataclass(frozen=True)
class CostConstraint:
    C: float
    active: bool = True

    def __post_init__(self):
        if not np.isfinite(self.C):
            raise InvalidArgument("cost cap must be finite")


@dataclass
class DiscretePortfolio:
    weights: np.ndarray
    branch: str
    lam: float
    cost: float
    objective: float
    labels: list
    instruments: InstrumentSet
    stationarity: float = 0.0
    slackness: float = 0.0
    C: float | None = None


@dataclass
class ContinuousPortfolio:
    K: np.ndarray
    pi: np.ndarray
    q: float
    p: float
    lam: float
    cost: float
    objective: float
    branch: str
    s0: float
    C: float | None = None
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# discrete
# ---------------------------------------------------------------------------

def _cho(moments: DiscreteMoments):
    try:
        return linalg.cho_factor(moments.psi, lower=True)
    except linalg.LinAlgError:
        from .moments import _redundancy_message
        raise RedundantInstrumentError(_redundancy_message(moments.psi, moments.labels)) from None


def discrete_objective(moments: DiscreteMoments, pi) -> float:
    pi = np.asarray(pi, float)
    return float(pi @ moments.psi @ pi - 2.0 * moments.gamma @ pi + moments.xi2)


def solve_discrete(moments: DiscreteMoments, C: CostConstraint | float | None = None) -> DiscretePortfolio:
    if isinstance(C, (int, float)):
        C = CostConstraint(float(C))
    cf = _cho(moments)
    gam, zt = moments.gamma, moments.ztilde
    a = linalg.cho_solve(cf, gam)
    a += linalg.cho_solve(cf, gam - moments.psi @ a)
    cost_u = float(zt @ a)
    if C is None or not C.active or cost_u <= C.C:
        pi, lam, branch = a, 0.0, "unconstrained"
    else:
        b = linalg.cho_solve(cf, zt)
        b += linalg.cho_solve(cf, zt - moments.psi @ b)
        denom = float(zt @ b)
        if denom <= 0:
            raise DegenerateSystemError("cost vector is orthogonal to the instrument span")
        lam = 2.0 * (C.C - cost_u) / denom
        pi = a + 0.5 * lam * b
        branch = "constrained"
    cost = float(zt @ pi)
    stat = float(np.max(np.abs(2 * moments.psi @ pi - 2 * (gam + 0.5 * lam * zt))))
    slack = abs(lam * (cost - C.C)) if (C is not None and C.active) else 0.0
    return DiscretePortfolio(pi, branch, float(lam), cost, discrete_objective(moments, pi),
                             list(moments.labels), moments.instruments, stat, slack,
                             None if C is None else C.C)


# ---------------------------------------------------------------------------
# finite differences and quadrature on a uniform strike grid
# ---------------------------------------------------------------------------

def _stencil(offsets, deriv: int = 2) -> np.ndarray:
    offsets = np.asarray(offsets, float)
    V = np.vander(offsets, increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[deriv] = factorial(deriv)
    return np.linalg.solve(V, rhs)


_INTERIOR = _stencil([-2, -1, 0, 1, 2])
_EDGE0 = _stencil([0, 1, 2, 3, 4, 5])
_EDGE1 = _stencil([-1, 0, 1, 2, 3, 4])


def second_derivative(f, h: float) -> np.ndarray:
    """4th-order d^2/dK^2: 5-point central inside, one-sided 6-point stencils at the edges."""
    f = np.asarray(f, float)
    n = len(f)
    if n < 6:
        raise GridError("strike grid needs at least 6 points for fourth-order differences")
    out = np.empty(n)
    out[2:-2] = (_INTERIOR[0] * f[:-4] + _INTERIOR[1] * f[1:-3] + _INTERIOR[2] * f[2:-2]
                 + _INTERIOR[3] * f[3:-1] + _INTERIOR[4] * f[4:])
    out[0] = _EDGE0 @ f[:6]
    out[1] = _EDGE1 @ f[:6]
    out[-1] = _EDGE0 @ f[::-1][:6]
    out[-2] = _EDGE1 @ f[::-1][:6]
    return out / h**2


def simpson_weights(K) -> np.ndarray:
    K = np.asarray(K, float)
    return integrate.simpson(np.eye(len(K)), x=K, axis=1)


def _grid_step(K) -> float:
    h = np.diff(K)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise GridError("strike grid must be uniform")
    return float(h[0])


# ---------------------------------------------------------------------------
# continuous
# ---------------------------------------------------------------------------

def pi_of_K_lambda(moments: ContinuousMoments, lam: float) -> np.ndarray:
    """pi(K, lam) = d^2/dK^2 [ c(K) + (lam/2) Gamma_tilde(K) / Gamma(K) ]."""
    if len(moments.K) < 5:
        raise GridError("strike grid needs at least 5 points")
    h = _grid_step(moments.K)
    return second_derivative(moments.cond + 0.5 * lam * moments.ratio, h)


def _base_parts(m: ContinuousMoments):
    h = _grid_step(m.K)
    w = simpson_weights(m.K)
    pi0 = second_derivative(m.cond, h)
    rho2 = second_derivative(m.ratio, h)
    return w, pi0, rho2


def continuous_objective(m: ContinuousMoments, pi, q: float, p: float, psi: np.ndarray | None = None) -> float:
    """J(pi, q, p) including E[Xi^2], with a double Simpson rule for the psi term."""
    w = simpson_weights(m.K)
    wp = w * np.asarray(pi, float)
    if psi is None:
        G = m.payoff_matrix()
        u = wp @ G
        g0 = np.asarray(vanilla_payoff(m.K, 0.0, m.s0))
        quad = float(np.dot(m.law.w, u * u) + m.law.atom * (wp @ g0) ** 2)
    else:
        quad = float(wp @ psi @ wp)
    return float(q * q + p * p * m.Sigma - 2 * p * m.theta - 2 * q * m.xi + 2 * q * p * m.beta
                 + quad + wp @ (2 * q * m.z + 2 * p * m.y - 2 * m.gamma) + m.xi2)


def _portfolio(m, pi, q, p, lam, branch, C=None) -> ContinuousPortfolio:
    w = simpson_weights(m.K)
    cost = float(q + w @ (pi * m.ztilde))
    return ContinuousPortfolio(m.K.copy(), pi, float(q), float(p), float(lam), cost,
                               continuous_objective(m, pi, q, p), branch, m.s0, C)


def solve_continuous_unconstrained(moments: ContinuousMoments) -> ContinuousPortfolio:
    m = moments
    w, pi0, _ = _base_parts(m)
    A = np.array([[1.0, m.beta], [m.beta, m.Sigma]])
    rhs = np.array([m.xi - w @ (m.z * pi0), m.theta - w @ (m.y * pi0)])
    if m.Sigma - m.beta**2 <= 1e-14 * max(1.0, m.Sigma):
        raise DegenerateSystemError("S_T is degenerate: Sigma <= beta^2")
    try:
        q, p = linalg.solve(A, rhs)
    except linalg.LinAlgError:
        raise DegenerateSystemError("singular 2x2 system for (q, p)") from None
    return _portfolio(m, pi0, q, p, 0.0, "unconstrained")


def solve_continuous_constrained(moments: ContinuousMoments, C: CostConstraint | float) -> ContinuousPortfolio:
    if isinstance(C, (int, float)):
        C = CostConstraint(float(C))
    m = moments
    unc = solve_continuous_unconstrained(m)
    if not C.active or unc.cost <= C.C:
        unc.C = C.C
        return unc
    w, pi0, rho2 = _base_parts(m)
    A = np.array([
        [1.0, m.beta, -0.5 + 0.5 * w @ (m.z * rho2)],
        [m.beta, m.Sigma, 0.5 * w @ (m.y * rho2)],
        [1.0, 0.0, 0.5 * w @ (m.ztilde * rho2)],
    ])
    rhs = np.array([m.xi - w @ (m.z * pi0), m.theta - w @ (m.y * pi0), C.C - w @ (m.ztilde * pi0)])
    try:
        q, p, lam = linalg.solve(A, rhs)
    except linalg.LinAlgError:
        raise DegenerateSystemError("singular 3x3 system for (q, p, lambda)") from None
    if not np.all(np.isfinite([q, p, lam])):
        raise DegenerateSystemError("3x3 system produced non-finite values")
    pi = pi0 + 0.5 * lam * rho2
    return _portfolio(m, pi, q, p, lam, "constrained", C.C)


def _remove_parity_jump(f, K, cut: int, half: int = 10, degree: int = 7) -> np.ndarray:
    """Subtract the linear jump a + bK that f picks up where puts become calls.

    Put-call parity makes the call-side values a smooth continuation of the
    put side up to a linear function; (a, b) come from a local least-squares
    fit of one polynomial through both sides.
    """
    lo, hi = max(cut - half, 0), min(cut + half, len(K))
    k = K[lo:hi]
    x = (k - K[cut]) / (K[1] - K[0]) / half
    step = (np.arange(lo, hi) >= cut).astype(float)
    A = np.column_stack([x**j for j in range(degree + 1)] + [step, step * x])
    coef, *_ = np.linalg.lstsq(A, f[lo:hi], rcond=None)
    a, b = coef[-2:]
    xs = (K[cut:] - K[cut]) / (K[1] - K[0]) / half
    out = f.copy()
    out[cut:] -= a + b * xs
    return out


def integral_equation_solve(f, Gamma, K, s0: float | None = None) -> np.ndarray:
    """pi(K) = d^2/dK^2 ( f''(K) / Gamma(K) ) through quintic spline fits.

    g(K, s) switches from put to call at S0, so f jumps there by a linear
    function of K; pass ``s0`` to remove that jump before fitting.
    """
    K = np.asarray(K, float)
    f = np.asarray(f, float)
    Gamma = np.asarray(Gamma, float)
    if np.any(Gamma <= 0):
        raise InvalidArgument("density must be positive on the grid")
    if s0 is not None and K[0] < s0 <= K[-1]:
        cut = int(np.searchsorted(K, s0))
        if cut < 6 or len(K) - cut < 6:
            raise GridError("need at least 6 strikes on each side of S0")
        _grid_step(K)
        f = _remove_parity_jump(f, K, cut)
    try:
        s1 = interpolate.make_interp_spline(K, f, k=5)
        g = s1.derivative(2)(K) / Gamma
        s2 = interpolate.make_interp_spline(K, g, k=5)
        out = s2.derivative(2)(K)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"spline fit failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise NumericalError("spline fit produced non-finite derivatives")
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def hedge_error(moments, portfolio) -> float:
    if isinstance(portfolio, DiscretePortfolio):
        if len(portfolio.weights) != moments.n:
            raise InvalidArgument("portfolio and moments have different sizes")
        return discrete_objective(moments, portfolio.weights)
    if len(portfolio.pi) != len(moments.K):
        raise InvalidArgument("portfolio and moments use different strike grids")
    return continuous_objective(moments, portfolio.pi, portfolio.q, portfolio.p)


def portfolio_profile(portfolio, s_grid) -> np.ndarray:
    """Terminal value Phi(S_T) of the static portfolio on ``s_grid``."""
    s = np.asarray(s_grid, float)
    if np.any(s <= 0):
        raise InvalidArgument("profile grid must be positive")
    if isinstance(portfolio, DiscretePortfolio):
        return portfolio.weights @ portfolio.instruments.terminal_values(s)
    wp = simpson_weights(portfolio.K) * portfolio.pi
    flat = s.ravel()
    out = np.empty_like(flat)
    for i in range(0, flat.size, 8192):
        chunk = flat[i:i + 8192]
        G = np.asarray(vanilla_payoff(portfolio.K[:, None], chunk[None, :], portfolio.s0))
        out[i:i + 8192] = wp @ G
    return portfolio.q + portfolio.p * (s - portfolio.s0) + out.reshape(s.shape)


def carr_madan_weights(f: GenericEuropean, s0: float, K=None):
    """(f(S0), f'(S0), f''(K)) for a smooth European claim."""
    q = float(f.value(s0))
    p = float(f.derivative(s0, 1))
    if K is None:
        return q, p, None
    return q, p, np.asarray(f.derivative(np.asarray(K, float), 2), float) * np.ones(np.shape(K))


def sign_changes(values, tol: float = 0.0) -> int:
    v = np.asarray(values, float)
    v = v[np.abs(v) > tol]
    return int(np.sum(np.signbit(v[1:]) != np.signbit(v[:-1])))
