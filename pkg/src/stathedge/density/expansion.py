"""Gaussian-kernel expansion of transition densities and expectations.

The generator is split into a Gaussian part (coefficients frozen at the
expansion point, plus any exactly linear drift) and Taylor corrections.
The n-th correction is a differential operator acting on the Gaussian
solution; operators are composed symbolically (see ``operators``) and the
nested time integrals are done with Gauss-Legendre rules on the simplex.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from math import factorial
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid
import sympy as sp

from ..errors import EllipticityError, InvalidArgument, NumericalError, UnsupportedOrderError
from ..models import (GeneratorCoefficients, ModelSpec, first_order_indices, generator,
                      second_order_indices)
from . import operators as ops

N_MAX = 3
D_MAX = 2
TIME_NODES = 16


@dataclass(frozen=True)
class GaussianKernelParams:
    mean: np.ndarray
    covariance: np.ndarray
    # Fundamental matrix exp(B (T - t)) of the exactly linear drift.
    transport: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def correlation(self) -> np.ndarray:
        s = self.std
        return self.covariance / np.outer(s, s)


@dataclass(frozen=True)
class ExpansionSpec:
    order: int = 2
    expansion_point: tuple | None = None
    time_nodes: int = TIME_NODES

    def __post_init__(self):
        if self.order < 0:
            raise InvalidArgument("expansion order must be >= 0")
        if self.order > N_MAX:
            raise UnsupportedOrderError(f"order {self.order} exceeds the cap N_max = {N_MAX}")


# ---------------------------------------------------------------------------
# Taylor coefficients
# ---------------------------------------------------------------------------

def _multi_indices(d: int, n: int):
    return [b for b in product(range(n + 1), repeat=d) if sum(b) == n]


def _beta_factorial(beta) -> int:
    out = 1
    for b in beta:
        out *= factorial(b)
    return out


@lru_cache(maxsize=4096)
def _sym_derivative(expr, syms, beta):
    out = expr
    for s, b in zip(syms, beta):
        if b:
            out = sp.diff(out, s, b)
    return out


def _fd_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    r = (order + 1) // 2 + 1
    pts = np.arange(-r, r + 1, dtype=float)
    V = np.vander(pts, increasing=True).T
    rhs = np.zeros(len(pts))
    rhs[order] = factorial(order)
    return pts, np.linalg.solve(V, rhs)


def _fd_derivative(f: Callable, xbar: np.ndarray, beta) -> float:
    """Mixed partial by tensor-product 4th-order central differences."""
    d = len(xbar)
    grids = []
    for i in range(d):
        if beta[i] == 0:
            grids.append((np.zeros(1), np.ones(1), 1.0))
            continue
        h = 1e-4 * 10 ** (beta[i] - 1) * max(1.0, abs(xbar[i]))
        pts, w = _fd_weights(beta[i])
        grids.append((pts * h, w, h ** beta[i]))
    total = 0.0
    for combo in product(*(range(len(g[0])) for g in grids)):
        pt = xbar.copy()
        wt = 1.0
        for i, k in enumerate(combo):
            pt[i] += grids[i][0][k]
            wt *= grids[i][1][k]
        total += wt * float(f(pt))
    for g in grids:
        total /= g[2]
    return total


def _detrended(coeffs: GeneratorCoefficients, alpha, t):
    """a_alpha minus the exactly linear drift component (first-order alpha only)."""
    B = coeffs.linear_drift
    f = coeffs.a[alpha]
    if B is None or sum(alpha) != 1:
        return lambda x: float(np.asarray(f(t, np.asarray(x, float))))
    i = alpha.index(1)
    return lambda x: float(np.asarray(f(t, np.asarray(x, float)))) - float(B[i] @ np.asarray(x, float))


def taylor_coefficients(coeffs: GeneratorCoefficients, xbar, n: int, t: float = 0.0) -> dict:
    """Degree-n Taylor term of each coefficient about ``xbar``.

    Returns ``{alpha: {beta: c}}`` meaning ``a_{alpha,n}(x) = sum_beta c (x - xbar)^beta``
    with ``c = d^beta a_alpha(xbar) / beta!``.  Analytic derivatives are used
    when the model carries symbolic coefficients.
    """
    xbar = np.asarray(xbar, dtype=float)
    d = coeffs.dim
    if len(xbar) != d:
        raise InvalidArgument("expansion point has wrong dimension")
    out: dict = {}
    B = coeffs.linear_drift
    alphas = first_order_indices(d) + second_order_indices(d)
    for alpha in alphas:
        terms = {}
        for beta in _multi_indices(d, n):
            if coeffs.symbolic is not None:
                expr = coeffs.symbolic[alpha]
                if B is not None and sum(alpha) == 1:
                    i = alpha.index(1)
                    expr = expr - sum(sp.Float(B[i, j]) * coeffs.symbols[j] for j in range(d))
                der = _sym_derivative(sp.sympify(expr), coeffs.symbols, beta)
                val = float(der.subs(dict(zip(coeffs.symbols, xbar))))
            else:
                try:
                    val = _fd_derivative(_detrended(coeffs, alpha, t), xbar, beta)
                except (ValueError, FloatingPointError) as exc:
                    raise NumericalError(f"numerical derivative failed for {alpha}, {beta}") from exc
            if not np.isfinite(val):
                raise NumericalError(f"non-finite derivative for {alpha}, {beta}")
            c = val / _beta_factorial(beta)
            if c != 0.0:
                terms[beta] = c
        out[alpha] = terms
    return out


# ---------------------------------------------------------------------------
# Gaussian kernel
# ---------------------------------------------------------------------------

def _order0(coeffs: GeneratorCoefficients, xbar, t):
    d = coeffs.dim
    tc = taylor_coefficients(coeffs, xbar, 0, t)
    zero = (0,) * d
    b = np.array([tc[a].get(zero, 0.0) for a in first_order_indices(d)])
    A = np.zeros((d, d))
    for a in second_order_indices(d):
        idx = [i for i, k in enumerate(a) for _ in range(k)]
        i, j = idx
        v = tc[a].get(zero, 0.0)
        if i == j:
            A[i, i] = 2.0 * v
        else:
            A[i, j] = A[j, i] = v
    return b, A


def _transport(B, tau: float, d: int) -> np.ndarray:
    if B is None:
        return np.eye(d)
    return scipy.linalg.expm(np.asarray(B, float) * tau)


class _Kernel:
    """Mean shift m(t, s), covariance C(t, s) and transport M(s - t) of the Gaussian part."""

    def __init__(self, coeffs: GeneratorCoefficients, xbar, t: float, homogeneous: bool,
                 nodes: int = TIME_NODES):
        self.coeffs = coeffs
        self.xbar = np.asarray(xbar, float)
        self.t = t
        self.d = coeffs.dim
        self.B = coeffs.linear_drift
        self.homogeneous = homogeneous
        self.nodes = nodes
        if homogeneous:
            self._b, self._A = _order0(coeffs, self.xbar, t)

    def _coef0(self, r):
        if self.homogeneous:
            return self._b, self._A
        return _order0(self.coeffs, self.xbar, r)

    def __call__(self, s: float):
        d, t = self.d, self.t
        tau = s - t
        M = _transport(self.B, tau, d)
        if tau <= 0:
            return M, np.zeros(d), np.zeros((d, d))
        u, w = np.polynomial.legendre.leggauss(self.nodes)
        r = t + 0.5 * tau * (u + 1.0)
        w = 0.5 * tau * w
        m = np.zeros(d)
        C = np.zeros((d, d))
        for ri, wi in zip(r, w):
            b, A = self._coef0(ri)
            E = _transport(self.B, s - ri, d)
            m += wi * (E @ b)
            C += wi * (E @ A @ E.T)
        return M, m, 0.5 * (C + C.T)


def kernel_params(coeffs: GeneratorCoefficients, x, xbar, t: float, T: float,
                  homogeneous: bool = True) -> GaussianKernelParams:
    """Mean and covariance of the Gaussian kernel started from ``x`` at ``t``."""
    if not T > t:
        raise InvalidArgument("need T > t")
    x = np.asarray(x, float)
    M, m, C = _Kernel(coeffs, xbar, t, homogeneous)(T)
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise EllipticityError("kernel covariance is not positive definite") from None
    return GaussianKernelParams(M @ x + m, C, M)


# ---------------------------------------------------------------------------
# correction operators
# ---------------------------------------------------------------------------

def compositions(n: int, k: int) -> list[tuple[int, ...]]:
    """The index set I_{n,k}: k-tuples of positive integers summing to n."""
    if k == 1:
        return [(n,)]
    return [(i,) + rest for i in range(1, n - k + 2) for rest in compositions(n - i, k - 1)]


@dataclass
class ExpansionOperator:
    """Correction operator L_n(t, T) evaluated at x = xbar.

    ``terms`` maps a derivative multi-index to its (already time-integrated)
    coefficient; all polynomial factors have been evaluated at ``xbar``.
    """

    order: int
    terms: dict
    index_sets: list = field(default_factory=list)

    @property
    def n_compositions(self) -> int:
        return len(self.index_sets)

    def is_zero(self, tol: float = 1e-14) -> bool:
        return all(abs(c) <= tol for c in self.terms.values())


class _Corrections:
    def __init__(self, coeffs: GeneratorCoefficients, xbar, t: float, homogeneous: bool,
                 nodes: int):
        self.coeffs = coeffs
        self.xbar = np.asarray(xbar, float)
        self.t = t
        self.d = coeffs.dim
        self.homogeneous = homogeneous
        self.nodes = nodes
        self.kernel = _Kernel(coeffs, xbar, t, homogeneous, nodes)
        self._taylor: dict = {}

    def taylor(self, i: int, s: float) -> dict:
        key = i if self.homogeneous else (i, s)
        if key not in self._taylor:
            self._taylor[key] = taylor_coefficients(self.coeffs, self.xbar, i, s)
        return self._taylor[key]

    def G(self, i: int, s: float) -> dict:
        d = self.d
        M, m, C = self.kernel(s)
        MinvT = np.linalg.inv(M).T
        E = C @ MinvT
        shift = (M - np.eye(d)) @ self.xbar + m
        X = [ops.linear_op(shift[j], M[j], E[j]) for j in range(d)]
        D = [ops.linear_op(0.0, np.zeros(d), MinvT[j]) for j in range(d)]
        xpow = [[ops.identity(d)] for _ in range(d)]
        out: dict = {}
        for alpha, poly in self.taylor(i, s).items():
            if not poly:
                continue
            deriv = ops.identity(d)
            for j, aj in enumerate(alpha):
                for _ in range(aj):
                    deriv = ops.compose(deriv, D[j])
            coef_op: dict = {}
            for beta, c in poly.items():
                term = ops.identity(d)
                for j, bj in enumerate(beta):
                    while len(xpow[j]) <= bj:
                        xpow[j].append(ops.compose(xpow[j][-1], X[j]))
                    term = ops.compose(term, xpow[j][bj])
                coef_op = ops.add(coef_op, ops.scale(term, c))
            out = ops.add(out, ops.compose(coef_op, deriv))
        return out

    def operator(self, n: int, T: float) -> ExpansionOperator:
        u, w = np.polynomial.legendre.leggauss(self.nodes)
        d = self.d
        total: dict = {}
        index_sets = []

        def nested(idx, level, lower, acc, weight):
            if level == len(idx):
                for a, c in acc.items():
                    total[a] = total.get(a, 0.0) + weight * c
                return
            half = 0.5 * (T - lower)
            for ui, wi in zip(u, w):
                s = lower + half * (ui + 1.0)
                nxt = ops.apply_constant_then(acc, self.G(idx[level], s))
                if nxt:
                    nested(idx, level + 1, s, nxt, weight * half * wi)

        for k in range(1, n + 1):
            for idx in compositions(n, k):
                index_sets.append(idx)
                nested(idx, 0, self.t, {(0,) * d: 1.0}, 1.0)
        terms = {a: c for a, c in total.items() if c != 0.0}
        return ExpansionOperator(n, terms, index_sets)


def expansion_operator(coeffs: GeneratorCoefficients, xbar, n: int, t: float, T: float,
                       homogeneous: bool = True, nodes: int = TIME_NODES) -> ExpansionOperator:
    if n < 1:
        raise InvalidArgument("correction operators start at n = 1")
    if n > N_MAX:
        raise UnsupportedOrderError(f"order {n} exceeds the cap N_max = {N_MAX}")
    if coeffs.dim > D_MAX:
        raise UnsupportedOrderError(f"dimension {coeffs.dim} exceeds the cap {D_MAX}")
    return _Corrections(coeffs, xbar, t, homogeneous, nodes).operator(n, T)


# ---------------------------------------------------------------------------
# densities and expectations
# ---------------------------------------------------------------------------

class DensityApprox:
    """N-th order approximation y -> Gamma_N(t, x; T, y)."""

    def __init__(self, model: ModelSpec, measure: str, order: int, kernel: GaussianKernelParams,
                 operators: list[ExpansionOperator]):
        self.model = model
        self.measure = measure
        self.order = order
        self.kernel = kernel
        self.operators = operators
        self._gauss = ops.GaussianDerivatives(kernel.covariance)
        self._zterms = [self._to_z({(0,) * model.dim: 1.0})]
        self._zterms += [self._to_z(op.terms) for op in operators]
        self._polys = [self._merge(zt) for zt in self._zterms]

    def _to_z(self, terms: dict) -> dict:
        out: dict = {}
        for alpha, c in terms.items():
            for g, cz in ops.x_to_z_derivatives(alpha, self.kernel.transport).items():
                out[g] = out.get(g, 0.0) + c * cz
        return out

    def _z(self, y):
        y = np.asarray(y, dtype=float)
        if self.model.dim == 1 and (y.ndim == 0 or y.shape[0] != 1):
            y = y[None, ...]
        mean = self.kernel.mean.reshape((-1,) + (1,) * (y.ndim - 1))
        return y - mean

    def _merge(self, zterms: dict) -> dict:
        """Collapse sum_g c_g H_g(z) into one polynomial {exponent: coefficient}."""
        poly: dict = {}
        for g, c in zterms.items():
            for e, ce in self._gauss.hermite(g).items():
                poly[e] = poly.get(e, 0.0) + c * ce
        return poly

    def term(self, n: int, y) -> np.ndarray:
        z = self._z(y)
        pdf = self._gauss.pdf(z)
        powers: dict = {}
        acc = np.zeros(z.shape[1:])
        for e, c in self._polys[n].items():
            t = np.full(z.shape[1:], c)
            for k, p in enumerate(e):
                if p:
                    if (k, p) not in powers:
                        powers[k, p] = z[k] ** p
                    t *= powers[k, p]
            acc += t
        return acc * pdf

    def __call__(self, y, order: int | None = None) -> np.ndarray:
        order = self.order if order is None else order
        return sum(self.term(n, y) for n in range(order + 1))

    def grid(self, n_sd: float = 8.0, points: int = 401):
        mu, sd = self.kernel.mean, self.kernel.std
        return [np.linspace(mu[i] - n_sd * sd[i], mu[i] + n_sd * sd[i], points)
                for i in range(self.model.dim)]

    def normalization(self, n_sd: float = 8.0, points: int = 401) -> float:
        axes = self.grid(n_sd, points)
        if self.model.dim == 1:
            return float(trapezoid(self(axes[0]), axes[0]))
        Y1, Y2 = np.meshgrid(axes[0], axes[1], indexing="ij")
        vals = self(np.stack([Y1, Y2]))
        return float(trapezoid(trapezoid(vals, axes[1], axis=1), axes[0]))


def density_approx(model: ModelSpec, measure: str, spec: ExpansionSpec, t: float, x,
                   T: float) -> DensityApprox:
    if not T > t:
        raise InvalidArgument("need T > t")
    if model.dim > D_MAX:
        raise UnsupportedOrderError(f"dimension {model.dim} exceeds the cap {D_MAX}")
    x = np.asarray(x, float)
    xbar = x if spec.expansion_point is None else np.asarray(spec.expansion_point, float)
    coeffs = generator(model, measure)
    kern = kernel_params(coeffs, x, xbar, t, T, model.time_homogeneous)
    corr = _Corrections(coeffs, xbar, t, model.time_homogeneous, spec.time_nodes)
    opers = [corr.operator(n, T) for n in range(1, spec.order + 1)]
    return DensityApprox(model, measure, spec.order, kern, opers)


def _composite_gl(lo: float, hi: float, breakpoints=(), panels: int = 64, nodes: int = 8):
    edges = np.unique(np.concatenate([np.linspace(lo, hi, panels + 1),
                                      [b for b in breakpoints if lo < b < hi]]))
    u, w = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    xs = (0.5 * (b - a) * (u + 1.0) + a).ravel()
    ws = (0.5 * (b - a) * w).ravel()
    return xs, ws


def expectation_approx(model: ModelSpec, measure: str, spec: ExpansionSpec,
                       phi: Callable, t: float, x, T: float, breakpoints=(),
                       n_sd: float = 10.0) -> float:
    """Approximate E[phi(X_T) | X_t = x] by integrating phi against Gamma_N.

    ``phi`` receives an array of shape ``(d, ...)``.  ``breakpoints`` lists
    kinks of ``phi`` along the first coordinate so the quadrature stays exact.
    """
    dens = density_approx(model, measure, spec, t, x, T)
    mu, sd = dens.kernel.mean, dens.kernel.std
    rules = []
    for i in range(model.dim):
        bp = breakpoints if i == 0 else ()
        rules.append(_composite_gl(mu[i] - n_sd * sd[i], mu[i] + n_sd * sd[i], bp))
    if model.dim == 1:
        y, w = rules[0]
        vals = np.asarray(phi(y[None, :]), float) * dens(y[None, :])
        out = float(np.sum(w * vals))
    else:
        (y1, w1), (y2, w2) = rules
        Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
        Y = np.stack([Y1, Y2])
        vals = np.asarray(phi(Y), float) * dens(Y)
        out = float(w1 @ vals @ w2)
    if not np.isfinite(out):
        raise NumericalError("expectation quadrature did not converge")
    return out
