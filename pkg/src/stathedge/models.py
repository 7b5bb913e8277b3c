"""Markov diffusion market models under the physical (P) and pricing (Q) measures.

State conventions
-----------------
* ``x[0]`` is always the log-price of the traded underlying ``S``.
* Correlated pair: ``x[1]`` is the log-price of the second asset ``V``.
* Heston: ``x[1]`` is the instantaneous variance.
* Running-average models: ``x[1]`` is the time average of ``x[0]`` over
  ``[0, horizon]`` and starts at zero.

Coefficient evaluators take ``(t, x)`` with ``x`` of shape ``(d, ...)`` and
return arrays of shape ``(d, ...)`` (drift) or ``(d, m, ...)`` (diffusion).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy as sp

from .errors import InvalidArgument

Evaluator = Callable[[float, np.ndarray], np.ndarray]

MEASURES = ("P", "Q")
CLOSED_FORMS = ("Lognormal1D", "Gaussian2D", "HestonJoint", "CevExact")


@dataclass(frozen=True)
class SymbolicCoefficients:
    """Sympy expressions of the coefficients; used for analytic Taylor terms."""

    symbols: tuple
    drift_p: tuple
    drift_q: tuple
    diffusion: sp.Matrix


@dataclass(frozen=True)
class ModelSpec:
    dim: int
    drift_p: Evaluator
    drift_q: Evaluator
    diffusion: Evaluator
    x0: tuple[float, ...]
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)
    closed_form: str | None = None
    # Exactly linear part B of the drift (dX = (b(x) + B x) dt + ...).  It is
    # carried inside the Gaussian kernel instead of being Taylor expanded.
    linear_drift: np.ndarray | None = None
    symbolic: SymbolicCoefficients | None = None
    time_homogeneous: bool = True
    # Set on running-average models: the 1D model driving ``x[0]``.
    base: "ModelSpec | None" = None
    horizon: float | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgument("dimension must be positive")
        if len(self.x0) != self.dim:
            raise InvalidArgument("x0 has wrong length")
        if self.closed_form is not None and self.closed_form not in CLOSED_FORMS:
            raise InvalidArgument(f"unknown closed-form tag {self.closed_form!r}")

    def drift(self, measure: str) -> Evaluator:
        if measure == "P":
            return self.drift_p
        if measure == "Q":
            return self.drift_q
        raise InvalidArgument(f"unknown measure {measure!r}; expected 'P' or 'Q'")

    def covariance(self, t: float, x) -> np.ndarray:
        """sigma sigma^T at (t, x), shape (d, d, ...)."""
        sig = np.asarray(self.diffusion(t, np.asarray(x, dtype=float)), dtype=float)
        return np.einsum("ik...,jk...->ij...", sig, sig)


@dataclass(frozen=True)
class GeneratorCoefficients:
    """Coefficients a_alpha of the generator, keyed by multi-index alpha."""

    dim: int
    a: dict
    measure: str
    symbolic: dict | None = None
    symbols: tuple | None = None
    linear_drift: np.ndarray | None = None

    def __call__(self, alpha, t, x):
        return self.a[tuple(alpha)](t, x)


def first_order_indices(d: int) -> list[tuple[int, ...]]:
    return [tuple(1 if j == i else 0 for j in range(d)) for i in range(d)]


def second_order_indices(d: int) -> list[tuple[int, ...]]:
    out = []
    for i in range(d):
        for j in range(i, d):
            alpha = [0] * d
            alpha[i] += 1
            alpha[j] += 1
            out.append(tuple(alpha))
    return out


def _pair(alpha) -> tuple[int, int]:
    idx = [i for i, a in enumerate(alpha) for _ in range(a)]
    return idx[0], idx[1]


def generator(model: ModelSpec, measure: str) -> GeneratorCoefficients:
    """Generator coefficients: first order = drift, second order from sigma sigma^T.

    Diagonal second-order entries are ``(sigma sigma^T)_ii / 2``; a mixed entry
    ``e_i + e_j`` collects both symmetric terms and equals ``(sigma sigma^T)_ij``.
    """
    drift = model.drift(measure)
    d = model.dim
    a: dict = {}
    for i, alpha in enumerate(first_order_indices(d)):
        a[alpha] = (lambda i: lambda t, x: np.asarray(drift(t, np.asarray(x, float)), float)[i])(i)
    for alpha in second_order_indices(d):
        i, j = _pair(alpha)
        factor = 0.5 if i == j else 1.0
        a[alpha] = (lambda i, j, f: lambda t, x: f * model.covariance(t, x)[i, j])(i, j, factor)

    sym = None
    syms = None
    if model.symbolic is not None:
        s = model.symbolic
        syms = s.symbols
        dr = s.drift_p if measure == "P" else s.drift_q
        cov = s.diffusion * s.diffusion.T
        sym = {}
        for i, alpha in enumerate(first_order_indices(d)):
            sym[alpha] = sp.sympify(dr[i])
        for alpha in second_order_indices(d):
            i, j = _pair(alpha)
            factor = sp.Rational(1, 2) if i == j else 1
            sym[alpha] = sp.simplify(factor * cov[i, j])
    return GeneratorCoefficients(d, a, measure, sym, syms, model.linear_drift)


def martingale_drift_check(model: ModelSpec, sample_points: Sequence, rtol: float = 1e-12) -> bool:
    """True iff the Q-drift of log S equals -1/2 sum_j sigma_1j^2 at every point."""
    pts = list(sample_points)
    if not pts:
        raise InvalidArgument("need at least one sample point")
    for t, x in pts:
        x = np.asarray(x, dtype=float)
        mu_q = float(np.asarray(model.drift_q(t, x))[0])
        half_var = 0.5 * float(model.covariance(t, x)[0, 0])
        if abs(mu_q + half_var) > rtol * max(1.0, abs(half_var)):
            return False
    return True


# ---------------------------------------------------------------------------
# named models
# ---------------------------------------------------------------------------

def _lambdify_vector(exprs, syms, floor: dict | None = None) -> Evaluator:
    funcs = [sp.lambdify(syms, e, "numpy") for e in exprs]

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        args = [x[i] for i in range(len(syms))]
        if floor:
            for i, lo in floor.items():
                args[i] = np.maximum(args[i], lo)
        shape = np.shape(args[0])
        return np.array([np.broadcast_to(np.asarray(f(*args), float), shape) for f in funcs])

    return ev


def _lambdify_matrix(mat: sp.Matrix, syms, floor: dict | None = None) -> Evaluator:
    rows, cols = mat.shape
    flat = _lambdify_vector([mat[i, j] for i in range(rows) for j in range(cols)], syms, floor)

    def ev(t, x):
        v = flat(t, x)
        return v.reshape((rows, cols) + v.shape[1:])

    return ev


def _symbolic_model(name, syms, drift_p, drift_q, diffusion, x0, params, closed_form=None,
                    floor=None, linear_drift=None, base=None, horizon=None) -> ModelSpec:
    diffusion = sp.Matrix(diffusion)
    return ModelSpec(
        dim=len(syms),
        drift_p=_lambdify_vector(drift_p, syms, floor),
        drift_q=_lambdify_vector(drift_q, syms, floor),
        diffusion=_lambdify_matrix(diffusion, syms, floor),
        x0=tuple(float(v) for v in x0),
        name=name,
        params=dict(params),
        closed_form=closed_form,
        linear_drift=linear_drift,
        symbolic=SymbolicCoefficients(tuple(syms), tuple(drift_p), tuple(drift_q), diffusion),
        base=base,
        horizon=horizon,
    )


def gbm(mu: float, sigma: float, s0: float = 1.0) -> ModelSpec:
    """Geometric Brownian motion; ``mu`` is the drift of S (log drift mu - sigma^2/2)."""
    if sigma <= 0 or s0 <= 0:
        raise InvalidArgument("gbm needs sigma > 0 and s0 > 0")
    x = sp.Symbol("x1", real=True)
    half = sp.Rational(1, 2) * sp.Float(sigma) ** 2
    return _symbolic_model(
        "gbm", (x,), [sp.Float(mu) - half], [-half], [[sp.Float(sigma)]],
        (np.log(s0),), {"mu": mu, "sigma": sigma, "s0": s0}, "Lognormal1D",
    )


def correlated_gbm(mu1: float, mu2: float, sigma1: float, sigma2: float, rho: float,
                   s0: float = 1.0, v0: float = 1.0) -> ModelSpec:
    """Log-prices of two correlated GBMs S and V, both traded."""
    if abs(rho) > 1 or sigma1 <= 0 or sigma2 <= 0:
        raise InvalidArgument("correlated_gbm needs sigma > 0 and |rho| <= 1")
    x1, x2 = sp.symbols("x1 x2", real=True)
    s1, s2 = sp.Float(sigma1), sp.Float(sigma2)
    h1, h2 = s1**2 / 2, s2**2 / 2
    r = sp.Float(rho)
    diff = [[s1, 0], [r * s2, sp.sqrt(1 - r**2) * s2]]
    return _symbolic_model(
        "correlated_gbm", (x1, x2), [sp.Float(mu1) - h1, sp.Float(mu2) - h2], [-h1, -h2], diff,
        (np.log(s0), np.log(v0)),
        {"mu1": mu1, "mu2": mu2, "sigma1": sigma1, "sigma2": sigma2, "rho": rho, "s0": s0, "v0": v0},
        "Gaussian2D",
    )


def heston(m: float, kappa: float, theta: float, delta: float, rho: float,
           x1: float = 0.0, x2: float = 0.04) -> ModelSpec:
    """Heston model in (log-price, variance); variance has the same law under P and Q."""
    if kappa <= 0 or theta <= 0 or delta <= 0 or abs(rho) > 1:
        raise InvalidArgument("heston needs kappa, theta, delta > 0 and |rho| <= 1")
    y1, y2 = sp.symbols("x1 x2", real=True)
    v = sp.Symbol("x2", positive=True)
    y2 = v
    r = sp.Float(rho)
    mean_rev = sp.Float(kappa) * (sp.Float(theta) - y2)
    sq = sp.sqrt(y2)
    diff = [[sq, 0], [sp.Float(delta) * r * sq, sp.Float(delta) * sp.sqrt(1 - r**2) * sq]]
    return _symbolic_model(
        "heston", (y1, y2), [sp.Float(m) - y2 / 2, mean_rev], [-y2 / 2, mean_rev], diff,
        (x1, x2), {"m": m, "kappa": kappa, "theta": theta, "delta": delta, "rho": rho,
                   "x1": x1, "x2": x2},
        "HestonJoint", floor={1: 0.0},
    )


def cev(m: float, delta: float, eta: float, x1: float = 0.0) -> ModelSpec:
    """CEV dynamics for the log-price: local vol delta * exp((eta - 1) x)."""
    if delta <= 0 or not (0 < eta <= 1):
        raise InvalidArgument("cev needs delta > 0 and eta in (0, 1]")
    x = sp.Symbol("x1", real=True)
    vol = sp.Float(delta) * sp.exp((sp.Float(eta) - 1) * x)
    half = vol**2 / 2
    return _symbolic_model(
        "cev", (x,), [sp.Float(m) - half], [-half], [[vol]], (x1,),
        {"m": m, "delta": delta, "eta": eta, "x1": x1}, "CevExact",
    )


def with_running_average(model: ModelSpec, horizon: float) -> ModelSpec:
    """Append X2 with dX2 = X1 / horizon dt, X2_0 = 0 (so X2_T is the average of X1)."""
    if model.dim != 1 or model.symbolic is None:
        raise InvalidArgument("running average is supported for named 1D models")
    if horizon <= 0:
        raise InvalidArgument("horizon must be positive")
    s = model.symbolic
    x1 = s.symbols[0]
    x2 = sp.Symbol("x2", real=True)
    avg = x1 / sp.Float(horizon)
    diff = sp.Matrix([[s.diffusion[0, 0]], [0]])
    lin = np.array([[0.0, 0.0], [1.0 / horizon, 0.0]])
    closed = "Gaussian2D" if model.closed_form == "Lognormal1D" else None
    return _symbolic_model(
        f"{model.name}_average", (x1, x2), [s.drift_p[0], avg], [s.drift_q[0], avg], diff,
        (model.x0[0], 0.0), {**model.params, "horizon": horizon}, closed,
        linear_drift=lin, base=model, horizon=horizon,
    )


def custom_model(dim: int, drift_p: Evaluator, drift_q: Evaluator, diffusion: Evaluator,
                 x0: Sequence[float], time_homogeneous: bool = True) -> ModelSpec:
    """User-supplied coefficients; Taylor terms then come from finite differences."""
    return ModelSpec(dim, drift_p, drift_q, diffusion, tuple(float(v) for v in x0),
                     time_homogeneous=time_homogeneous)


def named_model(kind: str, **kw) -> ModelSpec:
    """Build a named model from a config-style keyword set."""
    kind = kind.lower()
    try:
        if kind == "gbm":
            return gbm(kw["mu"], kw["sigma"], kw.get("s0", 1.0))
        if kind == "correlated_gbm":
            return correlated_gbm(kw["mu1"], kw["mu2"], kw["sigma1"], kw["sigma2"], kw["rho"],
                                  kw.get("s0", 1.0), kw.get("v0", 1.0))
        if kind == "heston":
            return heston(kw["m"], kw["kappa"], kw["theta"], kw["delta"], kw["rho"],
                          kw.get("x1", 0.0), kw.get("x2", 0.04))
        if kind == "cev":
            return cev(kw["m"], kw["delta"], kw["eta"], kw.get("x1", 0.0))
    except KeyError as exc:
        raise InvalidArgument(f"model {kind!r} is missing parameter {exc.args[0]!r}") from None
    raise InvalidArgument(f"unknown model kind {kind!r}")
