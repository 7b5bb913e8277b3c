"""Normal-ordered differential operators with polynomial coefficients.

An operator is a dict ``{(beta, alpha): c}`` standing for
``sum c * w**beta * d_w**alpha`` with multiplication to the left of
differentiation.  ``w = x - xbar`` is the shifted state variable.
"""
from __future__ import annotations

from itertools import product
from math import comb, factorial

import numpy as np

Op = dict


def _add(a, b):
    return tuple(i + j for i, j in zip(a, b))


def _sub(a, b):
    return tuple(i - j for i, j in zip(a, b))


def _leq(a, b):
    return all(i <= j for i, j in zip(a, b))


def _falling(n, k):
    out = 1
    for i in range(k):
        out *= n - i
    return out


def _sub_indices(bound):
    return product(*(range(b + 1) for b in bound))


def identity(d: int) -> Op:
    z = (0,) * d
    return {(z, z): 1.0}


def add(*ops: Op) -> Op:
    out: Op = {}
    for op in ops:
        for k, v in op.items():
            out[k] = out.get(k, 0.0) + v
    return out


def scale(op: Op, c: float) -> Op:
    return {k: c * v for k, v in op.items()}


def compose(left: Op, right: Op, drop_tol: float = 0.0) -> Op:
    """``left o right`` in normal order (Leibniz rule on d^alpha w^beta)."""
    out: Op = {}
    for (b1, a1), c1 in left.items():
        for (b2, a2), c2 in right.items():
            lim = tuple(min(i, j) for i, j in zip(a1, b2))
            for g in _sub_indices(lim):
                f = 1
                for ai, bi, gi in zip(a1, b2, g):
                    f *= comb(ai, gi) * _falling(bi, gi)
                key = (_add(b1, _sub(b2, g)), _add(_sub(a1, g), a2))
                out[key] = out.get(key, 0.0) + c1 * c2 * f
    if drop_tol:
        out = {k: v for k, v in out.items() if abs(v) > drop_tol}
    return out


def linear_op(const: float, wcoef, dcoef) -> Op:
    """``const + sum_l wcoef[l] w_l + sum_l dcoef[l] d_l``."""
    d = len(wcoef)
    z = (0,) * d
    out: Op = {}
    if const:
        out[(z, z)] = float(const)
    for l in range(d):
        e = tuple(1 if j == l else 0 for j in range(d))
        if wcoef[l]:
            out[(e, z)] = out.get((e, z), 0.0) + float(wcoef[l])
        if dcoef[l]:
            out[(z, e)] = out.get((z, e), 0.0) + float(dcoef[l])
    return out


def power(op: Op, n: int, d: int) -> Op:
    out = identity(d)
    for _ in range(n):
        out = compose(out, op)
    return out


def constant_part(op: Op) -> dict:
    """Keep only the w-free terms: ``{alpha: c}``."""
    d = len(next(iter(op))[0]) if op else 0
    z = (0,) * d
    return {a: c for (b, a), c in op.items() if b == z and c != 0.0}


def apply_constant_then(left_const: dict, right: Op) -> dict:
    """w-free part of ``(sum_alpha c_alpha d^alpha) o right``.

    Terms with leftover powers of w vanish at w = 0 and are dropped, so the
    result is again a constant-coefficient operator.
    """
    out: dict = {}
    for a1, c1 in left_const.items():
        for (b2, a2), c2 in right.items():
            if not _leq(b2, a1):
                continue
            f = 1
            for ai, bi in zip(a1, b2):
                f *= comb(ai, bi) * factorial(bi)
            key = _add(_sub(a1, b2), a2)
            out[key] = out.get(key, 0.0) + c1 * c2 * f
    return out


# ---------------------------------------------------------------------------
# Gaussian derivatives
# ---------------------------------------------------------------------------

class GaussianDerivatives:
    """Derivatives ``d_z^gamma phi_C(z) = H_gamma(z) phi_C(z)`` of a centred Gaussian.

    ``H_gamma`` are built by the recursion
    ``H_{gamma + e_i} = d_i H_gamma - (C^{-1} z)_i H_gamma``, with polynomials
    stored as ``{exponent: coefficient}``.
    """

    def __init__(self, cov: np.ndarray):
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.d = self.cov.shape[0]
        self.prec = np.linalg.inv(self.cov)
        _, logdet = np.linalg.slogdet(self.cov)
        self._lognorm = -0.5 * (self.d * np.log(2 * np.pi) + logdet)
        zero = (0,) * self.d
        self._cache = {zero: {zero: 1.0}}

    def hermite(self, gamma) -> dict:
        gamma = tuple(gamma)
        if gamma in self._cache:
            return self._cache[gamma]
        i = next(k for k, g in enumerate(gamma) if g > 0)
        prev = self.hermite(tuple(g - (k == i) for k, g in enumerate(gamma)))
        out: dict = {}
        for e, c in prev.items():
            if e[i] > 0:
                key = tuple(v - (k == i) for k, v in enumerate(e))
                out[key] = out.get(key, 0.0) + c * e[i]
            for j in range(self.d):
                p = self.prec[i, j]
                if p == 0.0:
                    continue
                key = tuple(v + (k == j) for k, v in enumerate(e))
                out[key] = out.get(key, 0.0) - c * p
        self._cache[gamma] = out
        return out

    def pdf(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        q = np.einsum("i...,ij,j...->...", z, self.prec, z)
        return np.exp(self._lognorm - 0.5 * q)

    def derivative_factor(self, gamma, z: np.ndarray) -> np.ndarray:
        """``H_gamma(z)`` evaluated pointwise; ``z`` has shape ``(d, ...)``."""
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[1:])
        for e, c in self.hermite(gamma).items():
            term = np.full(z.shape[1:], c)
            for k, p in enumerate(e):
                if p:
                    term = term * z[k] ** p
            out = out + term
        return out


def x_to_z_derivatives(alpha, M: np.ndarray) -> dict:
    """Expand ``d_x^alpha`` of ``f(y - M x - m)`` into ``{gamma: c}`` with ``d_z^gamma``.

    Uses ``d_{x_j} = -sum_i M_ij d_{z_i}``.
    """
    d = len(alpha)
    out = {(0,) * d: 1.0}
    for j, aj in enumerate(alpha):
        for _ in range(aj):
            nxt: dict = {}
            for g, c in out.items():
                for i in range(d):
                    mij = M[i, j]
                    if mij == 0.0:
                        continue
                    key = tuple(v + (k == i) for k, v in enumerate(g))
                    nxt[key] = nxt.get(key, 0.0) - c * mij
            out = nxt
    return out
