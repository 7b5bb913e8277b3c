"""Payoffs of the hedging instruments and of the claims being hedged."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

from .errors import InvalidArgument, StateMismatchError

COMMON_LEVERAGE = (-3, -2, -1, 2, 3)


def vanilla_payoff(K, s, s0: float):
    """Put payoff below ``s0``, call payoff at and above it."""
    K = np.asarray(K, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(K < 0) or np.any(s < 0):
        raise InvalidArgument("strikes and prices must be nonnegative")
    out = np.where(K < s0, np.maximum(K - s, 0.0), np.maximum(s - K, 0.0))
    return out if out.ndim else float(out)


def letf_terminal(ell: float, l0: float, x1_T, x1_0, qv_T):
    """Terminal LETF value given the log-price move and the quadratic variation."""
    qv_T = np.asarray(qv_T, dtype=float)
    if np.any(qv_T < 0):
        raise InvalidArgument("quadratic variation must be nonnegative")
    dx = np.asarray(x1_T, dtype=float) - np.asarray(x1_0, dtype=float)
    out = l0 * np.exp(ell * dx + 0.5 * ell * (1.0 - ell) * qv_T)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class CorrelatedCall:
    """Call on the second (non-traded) asset: (exp(X2_T) - K')^+."""

    kprime: float
    needs = ("x2",)


@dataclass(frozen=True)
class LetfCall:
    kprime: float
    ell: float
    l0: float = 1.0
    needs = ("x1", "x1_0", "qv")

    def __post_init__(self):
        if self.ell not in COMMON_LEVERAGE:
            warnings.warn(f"leverage ratio {self.ell} is not one of {COMMON_LEVERAGE}", stacklevel=2)


@dataclass(frozen=True)
class GeometricAsianCall:
    """(exp(X2_T) - K')^+ with X2 the running average of the log-price."""

    kprime: float
    needs = ("x2",)


@dataclass(frozen=True)
class GenericEuropean:
    """Claim f(S_T); ``df``/``d2f`` are optional analytic derivatives."""

    f: Callable
    df: Callable | None = None
    d2f: Callable | None = None
    name: str = "generic"
    needs = ("s",)

    def value(self, s):
        return np.asarray(self.f(np.asarray(s, float)), float)

    def derivative(self, s, order: int = 1, h: float = 1e-4):
        s = np.asarray(s, float)
        if order == 1:
            if self.df is not None:
                return np.asarray(self.df(s), float)
            return (self.value(s + h) - self.value(s - h)) / (2 * h)
        if order == 2:
            if self.d2f is not None:
                return np.asarray(self.d2f(s), float)
            return (self.value(s + h) - 2 * self.value(s) + self.value(s - h)) / h**2
        raise InvalidArgument("only first and second derivatives are available")


ClaimSpec = Union[CorrelatedCall, LetfCall, GeometricAsianCall, GenericEuropean]


def _get(state: Mapping, key: str, claim):
    if key in state:
        return np.asarray(state[key], dtype=float)
    if key == "s" and "x1" in state:
        return np.exp(np.asarray(state["x1"], dtype=float))
    if key == "x1_0":
        return np.zeros(())
    raise StateMismatchError(f"{type(claim).__name__} needs terminal coordinate {key!r}")


def claim_payoff(claim: ClaimSpec, state: Mapping):
    """Payoff of ``claim`` at a terminal state.

    ``state`` maps coordinate names to values (scalars or arrays): ``x1`` log
    price, ``x2`` second coordinate, ``qv`` quadratic variation of ``x1``,
    ``x1_0`` initial log price, ``s`` price.
    """
    if isinstance(claim, (CorrelatedCall, GeometricAsianCall)):
        out = np.maximum(np.exp(_get(state, "x2", claim)) - claim.kprime, 0.0)
    elif isinstance(claim, LetfCall):
        L = letf_terminal(claim.ell, claim.l0, _get(state, "x1", claim), _get(state, "x1_0", claim),
                          _get(state, "qv", claim))
        out = np.maximum(np.asarray(L) - claim.kprime, 0.0)
    elif isinstance(claim, GenericEuropean):
        out = claim.value(_get(state, "s", claim))
    else:
        raise InvalidArgument(f"unknown claim type {type(claim).__name__}")
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# instrument sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousBand:
    L: float
    R: float
    grid_size: int = 401

    def grid(self) -> np.ndarray:
        return np.linspace(self.L, self.R, self.grid_size)


@dataclass(frozen=True)
class DiscreteStrikes:
    strikes: tuple

    def __post_init__(self):
        object.__setattr__(self, "strikes", tuple(float(k) for k in self.strikes))


@dataclass(frozen=True)
class InstrumentSet:
    s0: float
    strikes: ContinuousBand | DiscreteStrikes
    includes_bond: bool = True
    includes_forward: bool = False
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        st = self.strikes
        if isinstance(st, ContinuousBand):
            if not (0 <= st.L <= self.s0 <= st.R):
                raise InvalidArgument("need 0 <= L <= S0 <= R")
            if st.grid_size < 5:
                raise InvalidArgument("strike grid needs at least 5 points")
        else:
            k = np.asarray(st.strikes)
            if np.any(k <= 0):
                raise InvalidArgument("strikes must be positive")
            if np.any(np.diff(k) < 0):
                raise InvalidArgument("strikes must be sorted")

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.strikes, DiscreteStrikes)

    def instrument_labels(self) -> list[str]:
        out = []
        if self.includes_bond:
            out.append("bond")
        if self.includes_forward:
            out.append("forward")
        if self.is_discrete:
            out += [f"{'put' if k < self.s0 else 'call'}_{k:g}" for k in self.strikes.strikes]
        return out

    def terminal_values(self, s) -> np.ndarray:
        """Payoffs Z_T(i) of every discrete instrument, shape (n, ...)."""
        if not self.is_discrete:
            raise InvalidArgument("terminal_values needs discrete strikes")
        s = np.asarray(s, dtype=float)
        rows = []
        if self.includes_bond:
            rows.append(np.ones_like(s))
        if self.includes_forward:
            rows.append(s - self.s0)
        for k in self.strikes.strikes:
            rows.append(np.asarray(vanilla_payoff(k, s, self.s0)) * np.ones_like(s))
        return np.array(rows)
