"""Joint transform of (log-price, quadratic variation) under Heston, and inversion.

Psi(T, x1, x2; xi, lam) = E[exp(i xi X1_T + lam <X1>_T)] is exponential-affine
in (x1, x2).  With u = i xi the Riccati system

    B' = delta^2 B^2 / 2 - (kappa - rho delta u) B + (u^2 - u) / 2 + lam,
    A' = m u + kappa theta B,

is solved in the form that keeps the complex logarithm continuous.

Expectations of functions of (X1_T, <X1>_T) are obtained three ways:

* ``joint_expectation`` with the closed-form Fourier-Laplace transform of
  f(x, y) = (exp(l x - th y) - e^k)^+.  ``method="residue"`` closes the lambda
  contour on the single pole, ``method="contour"`` does the double integral.
* ``expect_x`` / ``expect_w`` / ``expect_xw`` for piecewise-exponential
  functions of X and of W = l X - th Q (vanilla payoffs, LETF payoffs and
  their products), by damped one- and two-dimensional Fourier integrals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import ContourError, DomainError, InvalidArgument, InversionError
from .models import ModelSpec


@dataclass(frozen=True)
class HestonParams:
    m: float
    kappa: float
    theta: float
    delta: float
    rho: float
    x1: float = 0.0
    x2: float = 0.04

    @classmethod
    def from_model(cls, model: ModelSpec) -> "HestonParams":
        if model.closed_form != "HestonJoint":
            raise InvalidArgument(f"model {model.name!r} is not a Heston model")
        p = model.params
        return cls(p["m"], p["kappa"], p["theta"], p["delta"], p["rho"], p["x1"], p["x2"])


class JointCmgf:
    """Psi(T, x1, x2; xi, lam) for complex arrays ``xi`` and ``lam``."""

    def __init__(self, params: HestonParams, T: float, measure: str = "P"):
        if T <= 0:
            raise InvalidArgument("maturity must be positive")
        if measure not in ("P", "Q"):
            raise InvalidArgument(f"unknown measure {measure!r}")
        self.params = params
        self.T = T
        self.measure = measure
        self.m = params.m if measure == "P" else 0.0

    def _parts(self, xi, lam):
        p = self.params
        u = 1j * np.asarray(xi, dtype=complex)
        lam = np.asarray(lam, dtype=complex)
        tau = self.T
        b = p.kappa - p.rho * p.delta * u
        c0 = 0.5 * (u * u - u) + lam
        if p.delta < 1e-6:
            # vol-of-vol negligible: deterministic variance path (avoids 1/delta^2 cancellation)
            B = c0 * (1.0 - np.exp(-p.kappa * tau)) / p.kappa
            A = self.m * u * tau + p.kappa * p.theta * c0 * (tau - (1.0 - np.exp(-p.kappa * tau)) / p.kappa) / p.kappa
            return u, A, B, None
        d = np.sqrt(b * b - 2.0 * p.delta**2 * c0)
        d = np.where(d.real < 0, -d, d)
        g = (b - d) / (b + d)
        e = np.exp(-d * tau)
        ratio = (1.0 - g * e) / (1.0 - g)
        logr = np.log(ratio)
        B = (b - d) / p.delta**2 * (1.0 - e) / (1.0 - g * e)
        A = self.m * u * tau + p.kappa * p.theta / p.delta**2 * ((b - d) * tau - 2.0 * logr)
        return u, A, B, ratio

    def __call__(self, xi, lam=0.0):
        u, A, B, _ = self._parts(xi, lam)
        return np.exp(u * self.params.x1 + A + B * self.params.x2)

    def check_contour(self, xi, lam=0.0):
        """Raise ContourError if the logarithm in A jumps along an ordered contour."""
        _, _, _, ratio = self._parts(xi, lam)
        if ratio is None or np.size(ratio) < 2:
            return
        ang = np.angle(np.ravel(ratio))
        jumps = np.abs(np.diff(ang))
        if np.any(jumps > np.pi):
            raise ContourError("branch-cut crossing of the complex logarithm along the contour")


def joint_cmgf(params: HestonParams | ModelSpec, T: float, measure: str = "P") -> JointCmgf:
    if isinstance(params, ModelSpec):
        params = HestonParams.from_model(params)
    return JointCmgf(params, T, measure)


# ---------------------------------------------------------------------------
# closed-form payoff transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformPayoff:
    """f(x, y) = (exp(l x - th y) - e^k)^+ and its raw Fourier-Laplace transform.

    ``fhat(xi, lam) = int dx int_0^inf dy exp(-i xi x - lam y) f(x, y)``, valid
    for Im(xi) < -l and Re(lam) > Im(th xi / l).
    """

    ell: float
    theta: float
    k: float

    def value(self, x, y):
        return np.maximum(np.exp(self.ell * np.asarray(x, float) - self.theta * np.asarray(y, float))
                          - np.exp(self.k), 0.0)

    def admissible(self, xi, lam) -> np.ndarray:
        xi = np.asarray(xi, complex)
        lam = np.asarray(lam, complex)
        return (xi.imag < -self.ell) & (lam.real > (self.theta * xi / self.ell).imag)

    def fhat(self, xi, lam):
        xi = np.asarray(xi, complex)
        lam = np.asarray(lam, complex)
        if not np.all(self.admissible(xi, lam)):
            raise DomainError("transform evaluated outside its admissible region")
        return self.numerator(xi) / (self.theta * xi - 1j * lam * self.ell)

    def numerator(self, xi):
        l, k = self.ell, self.k
        return l * l * np.exp(k - 1j * k * xi / l) / (xi * (l - 1j * xi))

    def pole(self, xi):
        return -1j * self.theta * np.asarray(xi, complex) / self.ell


def payoff_transform(ell_exp: float, theta_exp: float, k: float) -> TransformPayoff:
    if ell_exp <= 0 or theta_exp <= 0:
        raise InvalidArgument("payoff transform needs positive exponents (negate x for l < 0)")
    return TransformPayoff(float(ell_exp), float(theta_exp), float(k))


@dataclass(frozen=True)
class InversionResult:
    value: float
    imag_residual: float
    method: str


def _real_line_integral(fun, tol: float = 1e-11, start: float = 50.0, cap: float = 3200.0):
    """int_0^U Re fun(s) ds with U doubled until the tail is negligible."""
    U = start
    total, _ = integrate.quad(lambda s: fun(s).real, 0.0, U, limit=400, epsabs=tol, epsrel=1e-12)
    while U < cap:
        tail, _ = integrate.quad(lambda s: fun(s).real, U, 2 * U, limit=400, epsabs=tol, epsrel=1e-12)
        total += tail
        U *= 2
        if abs(tail) < tol:
            break
    return total


def joint_expectation(cmgf: JointCmgf, payoff: TransformPayoff, contour: dict | None = None,
                      method: str = "residue", negate_x: bool = False) -> InversionResult:
    """E f(X1_T, <X1>_T) by inverting the Fourier-Laplace transform.

    With the raw transform ``fhat`` the inversion reads
    E f = (1/2pi)(1/2pi i) int dxi int dlam Psi(xi, lam) fhat(xi, lam).
    ``negate_x`` evaluates f(-x, y), which is how l < 0 payoffs are handled.
    ``contour`` may set ``xi_im`` (default -(l + 1)) and ``eta`` (offset to the
    right of the lambda pole, default 1).
    """
    contour = dict(contour or {})
    xi_im = contour.get("xi_im", -(payoff.ell + 1.0))
    eta_off = contour.get("eta", 1.0)
    if xi_im >= -payoff.ell:
        raise DomainError("need Im(xi) < -l on the inversion contour")
    sgn = -1.0 if negate_x else 1.0

    def psi(xi, lam):
        return cmgf(sgn * xi, lam)

    probe = np.linspace(-60, 60, 241) + 1j * xi_im
    cmgf.check_contour(sgn * probe, payoff.pole(probe))

    if method == "residue":
        def integrand(s):
            xi = s + 1j * xi_im
            return (1j / payoff.ell) * payoff.numerator(xi) * psi(xi, payoff.pole(xi))
        val = _real_line_integral(integrand) / np.pi
        # the full-line imaginary part should vanish; integrate each half separately
        im_pos = integrate.quad(lambda s: integrand(s).imag, 0.0, 50.0, limit=200)[0]
        im_neg = integrate.quad(lambda s: integrand(s).imag, -50.0, 0.0, limit=200)[0]
        imag = abs(im_pos + im_neg) / (2 * np.pi)
        if imag > 1e-6 * max(abs(val), 1e-12) + 1e-12:
            raise InversionError(f"imaginary residual {imag:.3g} too large")
        return InversionResult(float(val), float(imag), method)

    if method == "contour":
        val = _double_contour(psi, payoff, xi_im, eta_off, contour.get("tol", 1e-8))
        if abs(val.imag) > 1e-6 * max(abs(val.real), 1e-12) + 1e-9:
            raise InversionError(f"imaginary residual {abs(val.imag):.3g} too large")
        return InversionResult(float(val.real), float(abs(val.imag)), method)
    raise InvalidArgument(f"unknown inversion method {method!r}")


def _panels(lo, hi, n_panels, nodes=8):
    u, w = np.polynomial.legendre.leggauss(nodes)
    e = np.linspace(lo, hi, n_panels + 1)
    a, b = e[:-1, None], e[1:, None]
    return (0.5 * (b - a) * (u + 1) + a).ravel(), (0.5 * (b - a) * w).ravel()


def _double_contour(psi, payoff, xi_im, eta_off, tol, xi_max=100.0, lam_start=200.0,
                    lam_cap=12800.0):
    """Literal double integral along Im xi = xi_im, Re lam = pole + eta_off.

    Both axes are integrated in full so the imaginary part is a genuine
    accuracy residual rather than zero by symmetry.
    """
    s, ws = _panels(-xi_max, xi_max, 100)
    xi = s + 1j * xi_im
    num = payoff.numerator(xi)
    eta = (payoff.theta * xi / payoff.ell).imag + eta_off

    def lam_part(lo, hi):
        t, wt = _panels(lo, hi, max(8, int((hi - lo) / 2.0)))
        out = np.zeros(len(xi), dtype=complex)
        for j in range(0, len(t), 2048):
            tj, wj = t[j:j + 2048], wt[j:j + 2048]
            lam = eta[:, None] + 1j * tj[None, :]
            f = psi(xi[:, None], lam) / (payoff.theta * xi[:, None] - 1j * lam * payoff.ell)
            # dlam = i dt and the 1/(2 pi i) prefactor leave 1/(2 pi)
            out += (f * wj).sum(axis=1) / (2 * np.pi)
        return out

    inner = lam_part(-lam_start, lam_start)
    prev = None
    L = lam_start
    while True:
        cur = ((num * inner * ws).sum() / (2 * np.pi)).real
        if prev is not None and abs(cur - prev) < tol:
            break
        if L >= lam_cap:
            raise InversionError("lambda truncation did not converge")
        inner = inner + lam_part(L, 2 * L) + lam_part(-2 * L, -L)
        L *= 2
        prev = cur
    imag = ((num * inner * ws).sum() / (2 * np.pi)).imag
    return complex(cur, imag)


# ---------------------------------------------------------------------------
# piecewise-exponential payoffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseExp:
    """sum_j c_j exp(a_j x) 1{lo_j < x < hi_j}; bounds may be infinite."""

    terms: tuple

    def __call__(self, x):
        x = np.asarray(x, float)
        out = np.zeros_like(x)
        for c, a, lo, hi in self.terms:
            with np.errstate(over="ignore"):
                out = out + np.where((x > lo) & (x < hi), c * np.exp(a * x), 0.0)
        return out

    def damping_interval(self) -> tuple[float, float]:
        """Open interval of Im(u) on which the Fourier transform exists."""
        lo_b, hi_b = -np.inf, np.inf
        for _, a, lo, hi in self.terms:
            if np.isinf(hi):
                hi_b = min(hi_b, -a)
            if np.isinf(lo):
                lo_b = max(lo_b, -a)
        return lo_b, hi_b

    def transform(self, u):
        """int exp(-i u x) f(x) dx."""
        u = np.asarray(u, complex)
        out = np.zeros_like(u)
        for c, a, lo, hi in self.terms:
            r = a - 1j * u
            top = 0.0 if np.isinf(hi) else np.exp(r * hi)
            bot = 0.0 if np.isinf(lo) else np.exp(r * lo)
            out = out + c * (top - bot) / r
        return out

    def __mul__(self, other: "PiecewiseExp") -> "PiecewiseExp":
        terms = []
        for c1, a1, lo1, hi1 in self.terms:
            for c2, a2, lo2, hi2 in other.terms:
                lo, hi = max(lo1, lo2), min(hi1, hi2)
                if lo < hi:
                    terms.append((c1 * c2, a1 + a2, lo, hi))
        return PiecewiseExp(tuple(terms))

    def scaled(self, c: float) -> "PiecewiseExp":
        return PiecewiseExp(tuple((c * t[0],) + tuple(t[1:]) for t in self.terms))


def vanilla_pieces(K: float, s0: float) -> PiecewiseExp:
    """g(K, e^x): put below s0, call at and above."""
    k = np.log(K)
    if K < s0:
        return PiecewiseExp(((K, 0.0, -np.inf, k), (-1.0, 1.0, -np.inf, k)))
    return PiecewiseExp(((1.0, 1.0, k, np.inf), (-K, 0.0, k, np.inf)))


def call_pieces(k: float, scale: float = 1.0) -> PiecewiseExp:
    """scale * (e^w - e^k)^+."""
    return PiecewiseExp(((scale, 1.0, k, np.inf), (-scale * np.exp(k), 0.0, k, np.inf)))


def _pick_damping(f: PiecewiseExp, prefer: float | None = None) -> float:
    lo, hi = f.damping_interval()
    if prefer is not None and lo < prefer < hi:
        return prefer
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    if np.isfinite(hi):
        return hi - 0.5
    if np.isfinite(lo):
        return lo + 0.5
    return 0.0


def expect_x(cmgf: JointCmgf, G: PiecewiseExp, damping: float | None = None) -> float:
    """E[G(X1_T)]."""
    b = _pick_damping(G, damping)

    def integrand(s):
        u = s + 1j * b
        return G.transform(u) * cmgf(u, 0.0)

    cmgf.check_contour(np.linspace(-60, 60, 241) + 1j * b, 0.0)
    return float(_real_line_integral(integrand) / np.pi)


def expect_w(cmgf: JointCmgf, H: PiecewiseExp, ell: float, theta: float,
             damping: float | None = None, x_exp: float = 0.0) -> float:
    """E[exp(x_exp X1_T) H(W)] with W = ell X1_T - theta <X1>_T."""
    b = _pick_damping(H, damping)
    shift = -1j * x_exp

    def integrand(s):
        v = s + 1j * b
        return H.transform(v) * cmgf(ell * v + shift, -1j * theta * v)

    probe = np.linspace(-60, 60, 241) + 1j * b
    cmgf.check_contour(ell * probe + shift, -1j * theta * probe)
    return float(_real_line_integral(integrand) / np.pi)


def _cmgf_scale(cmgf: JointCmgf) -> float:
    """Rough standard deviation of X1_T, used to size the Fourier box."""
    p = cmgf.params
    vbar = p.theta + (p.x2 - p.theta) * (1 - np.exp(-p.kappa * cmgf.T)) / (p.kappa * cmgf.T)
    return float(np.sqrt(max(vbar, 1e-6) * cmgf.T))


def _graded_panels(vmax: float, h0: float, growth: float, hmax: float, nodes: int):
    edges = [0.0]
    h = h0
    while edges[-1] < vmax:
        edges.append(edges[-1] + h)
        h = min(h * growth, hmax)
    u, w = np.polynomial.legendre.leggauss(nodes)
    e = np.asarray(edges)
    a, b = e[:-1, None], e[1:, None]
    return (0.5 * (b - a) * (u + 1) + a).ravel(), (0.5 * (b - a) * w).ravel()


def expect_xw(cmgf: JointCmgf, G: PiecewiseExp, H: PiecewiseExp, ell: float, theta: float,
              damp_u: float | None = None, damp_v: float | None = None,
              nodes: int = 8, vmax: float = 4000.0) -> float:
    """E[G(X1_T) H(W)] by the two-dimensional damped Fourier integral

    (1/4 pi^2) int int Ghat(u) Hhat(v) Psi(u + ell v, -i theta v) du dv.

    The integral is taken in (xi, v) with xi = u + ell v: Psi decays quickly
    in Re xi but only slowly in v (the law of <X1>_T is narrow), so v gets a
    long graded range while xi gets a short uniform one.
    """
    bu = _pick_damping(G, damp_u)
    bv = _pick_damping(H, damp_v)
    sd = _cmgf_scale(cmgf)
    ximax = 9.0 / sd + 20.0
    # Ghat(xi - ell v) peaks with width ~|Im u|, so xi panels stay narrow
    a, wa = _panels(-ximax, ximax, int(4 * ximax) + 32, nodes)
    c, wc = _graded_panels(vmax, 0.25, 1.05, 25.0, nodes)
    xi_im = bu + ell * bv
    xi = a + 1j * xi_im
    total = 0.0
    for ci, wci in zip(c, wc):
        v = ci + 1j * bv
        u = xi - ell * v
        vals = G.transform(u) * cmgf(xi, -1j * theta * v)
        total += wci * (H.transform(v) * np.dot(wa, vals)).real
    return float(2.0 * total / (4 * np.pi**2))


# ---------------------------------------------------------------------------
# LETF claim helpers
# ---------------------------------------------------------------------------

def letf_exponents(ell: float) -> tuple[float, float]:
    """(ell, theta) with log(L_T / L_0) = ell dX - theta <X>_T."""
    return float(ell), float(-0.5 * ell * (1.0 - ell))


def letf_pieces(ell: float, kprime: float, l0: float, x1_0: float, power: int = 1) -> PiecewiseExp:
    """((L_T - K')^+)^power as a function of W = ell X1_T - theta <X1>_T."""
    base = l0 * np.exp(-ell * x1_0)
    k = np.log(kprime / base)
    h = call_pieces(k, base)
    return h if power == 1 else h * h


def letf_call_price(cmgf: JointCmgf, ell: float, kprime: float, l0: float = 1.0,
                    method: str = "residue", contour: dict | None = None) -> InversionResult:
    """E[(L_T - K')^+] through ``joint_expectation`` (sign handling for ell < 0)."""
    x1_0 = cmgf.params.x1
    l_exp, th = letf_exponents(ell)
    base = l0 * np.exp(-ell * x1_0)
    pay = payoff_transform(abs(l_exp), th, np.log(kprime / base))
    res = joint_expectation(cmgf, pay, contour, method, negate_x=ell < 0)
    return InversionResult(base * res.value, base * res.imag_residual, res.method)


def letf_moments(cmgf: JointCmgf, ell: float, kprime: float, l0: float, strikes: Sequence[float],
                 s0: float) -> dict:
    """E[h], E[h^2], E[g_i], E[g_i g_j] and E[g_i h] for an LETF call h."""
    l_exp, th = letf_exponents(ell)
    x1_0 = cmgf.params.x1
    H = letf_pieces(ell, kprime, l0, x1_0)
    H2 = letf_pieces(ell, kprime, l0, x1_0, power=2)
    gs = [vanilla_pieces(K, s0) for K in strikes]
    n = len(strikes)
    out = {
        "h": expect_w(cmgf, H, l_exp, th, -1.5),
        "h2": expect_w(cmgf, H2, l_exp, th, -2.5),
        "g": np.array([expect_x(cmgf, g) for g in gs]),
        "gg": np.zeros((n, n)),
        "gh": np.zeros(n),
    }
    for i in range(n):
        for j in range(i, n):
            out["gg"][i, j] = out["gg"][j, i] = expect_x(cmgf, gs[i] * gs[j])
        prefer = -1.5 if strikes[i] >= s0 else 0.5
        out["gh"][i] = expect_xw(cmgf, gs[i], H, l_exp, th, prefer, -1.5)
    return out
