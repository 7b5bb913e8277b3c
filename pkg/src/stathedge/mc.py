"""Monte Carlo oracle for terminal functionals of the market models.

Paths are generated in fixed-size blocks.  Block ``b`` draws from its own
Philox stream seeded by ``SeedSequence(seed, spawn_key=(b,))``, so a batch is
bit-identical however the blocks are spread over workers.
"""
from __future__ import annotations

from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument, SimulationError, StateMismatchError
from .models import ModelSpec

KINDS = ("ExactLognormal", "ExactGaussian2D", "EulerFullTruncation", "EulerLog")
BLOCK = 1 << 14


@dataclass(frozen=True)
class SimScheme:
    kind: str
    steps_per_year: int = 250
    record: tuple = ("x1", "s", "x2", "qv")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown scheme {self.kind!r}; expected one of {KINDS}")
        if self.steps_per_year < 1:
            raise InvalidArgument("steps_per_year must be positive")


def default_scheme(model: ModelSpec, steps_per_year: int = 250) -> SimScheme:
    base = model.base or model
    tag = base.closed_form
    if model.base is None and tag == "Gaussian2D":
        return SimScheme("ExactGaussian2D", steps_per_year)
    if tag == "Lognormal1D":
        return SimScheme("ExactLognormal", steps_per_year)
    if tag == "HestonJoint":
        return SimScheme("EulerFullTruncation", steps_per_year)
    return SimScheme("EulerLog", steps_per_year)


class Records(Mapping):
    """Terminal records; a missing coordinate raises StateMismatchError."""

    def __init__(self, data: dict):
        self._data = data

    def __getitem__(self, key):
        try:
            return self._data[key]
        except KeyError:
            raise StateMismatchError(f"coordinate {key!r} was not recorded") from None

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)


@dataclass
class PathBatch:
    records: Records
    seed: int
    paths: int
    scheme: SimScheme
    T: float
    measure: str


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    paths: int
    seed: int

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.value - target) <= n_se * self.std_error + 1e-12


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _check(arr, step, name):
    if not np.all(np.isfinite(arr)):
        raise SimulationError(f"non-finite {name} at step {step}")


def _block(model: ModelSpec, measure: str, scheme: SimScheme, n: int, T: float,
           rng: np.random.Generator) -> dict:
    kind = scheme.kind
    want_avg = model.base is not None
    base = model.base or model
    x0 = np.asarray(model.x0, float)
    steps = max(1, int(round(scheme.steps_per_year * T)))
    dt = T / steps
    sq = np.sqrt(dt)
    out: dict = {"x1_0": np.full(n, x0[0])}

    if kind == "ExactGaussian2D":
        if model.base is not None or model.closed_form != "Gaussian2D":
            raise InvalidArgument("ExactGaussian2D needs a correlated Gaussian model")
        p = model.params
        s1, s2, r = p["sigma1"], p["sigma2"], p["rho"]
        m1 = (p["mu1"] if measure == "P" else 0.0) - 0.5 * s1**2
        m2 = (p["mu2"] if measure == "P" else 0.0) - 0.5 * s2**2
        z = rng.standard_normal((2, n))
        w2 = r * z[0] + np.sqrt(1 - r * r) * z[1]
        out["x1"] = x0[0] + m1 * T + s1 * np.sqrt(T) * z[0]
        out["x2"] = x0[1] + m2 * T + s2 * np.sqrt(T) * w2
        out["qv"] = np.full(n, s1**2 * T)
        return out

    if kind == "ExactLognormal":
        if base.closed_form != "Lognormal1D":
            raise InvalidArgument("ExactLognormal needs a GBM model")
        p = base.params
        sig = p["sigma"]
        b = (p["mu"] if measure == "P" else 0.0) - 0.5 * sig**2
        if not want_avg:
            out["x1"] = x0[0] + b * T + sig * np.sqrt(T) * rng.standard_normal(n)
            out["qv"] = np.full(n, sig**2 * T)
            return out
        x = np.full(n, x0[0])
        acc = np.zeros(n)
        for k in range(steps):
            xn = x + b * dt + sig * sq * rng.standard_normal(n)
            acc += 0.5 * (x + xn) * dt
            x = xn
        out["x1"] = x
        out["x2"] = x0[1] + acc / model.horizon
        out["qv"] = np.full(n, sig**2 * T)
        return out

    if kind == "EulerFullTruncation":
        if base.closed_form != "HestonJoint":
            raise InvalidArgument("EulerFullTruncation needs a Heston model")
        p = base.params
        m = p["m"] if measure == "P" else 0.0
        kap, th, dl, r = p["kappa"], p["theta"], p["delta"], p["rho"]
        rr = np.sqrt(1 - r * r)
        x = np.full(n, x0[0])
        v = np.full(n, x0[1])
        qv = np.zeros(n)
        for k in range(steps):
            z = rng.standard_normal((2, n))
            vp = np.maximum(v, 0.0)
            sv = np.sqrt(vp)
            qv += vp * dt
            x = x + (m - 0.5 * vp) * dt + sv * sq * z[0]
            v = v + kap * (th - vp) * dt + dl * sv * sq * (r * z[0] + rr * z[1])
            if k % 25 == 0 or k == steps - 1:
                _check(x, k, "log-price")
                _check(v, k, "variance")
        out["x1"], out["x2"], out["qv"] = x, v, qv
        return out

    # EulerLog: Euler in state coordinates using the model's own coefficients
    drift = base.drift(measure)
    x = np.tile(np.asarray(base.x0, float)[:, None], (1, n))
    qv = np.zeros(n)
    acc = np.zeros(n)
    for k in range(steps):
        t = k * dt
        mu = np.asarray(drift(t, x), float)
        sig = np.asarray(base.diffusion(t, x), float)
        z = rng.standard_normal((sig.shape[1], n))
        qv += np.sum(sig[0] ** 2, axis=0) * dt
        xn = x + mu * dt + np.einsum("ij...,j...->i...", sig, z) * sq
        _check(xn, k, "state")
        if want_avg:
            acc += 0.5 * (x[0] + xn[0]) * dt
        x = xn
    out["x1"] = x[0]
    if base.dim > 1:
        out["x2"] = x[1]
    if want_avg:
        out["x2"] = x0[1] + acc / model.horizon
    out["qv"] = qv
    return out


def simulate(model: ModelSpec, measure: str, scheme: SimScheme | None, paths: int, seed: int,
             T: float, workers: int = 1) -> PathBatch:
    """Simulate ``paths`` terminal records at maturity ``T``."""
    if paths < 1:
        raise InvalidArgument("need at least one path")
    if T <= 0:
        raise InvalidArgument("maturity must be positive")
    if measure not in ("P", "Q"):
        raise InvalidArgument(f"unknown measure {measure!r}")
    scheme = scheme or default_scheme(model)
    sizes = [min(BLOCK, paths - s) for s in range(0, paths, BLOCK)]

    def run(b):
        with np.errstate(over="raise", invalid="raise"):
            try:
                return _block(model, measure, scheme, sizes[b], T, _rng(seed, b))
            except FloatingPointError as exc:
                raise SimulationError(f"floating-point failure in block {b}: {exc}") from None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    data = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    data["s"] = np.exp(data["x1"])
    if "x2" in data and model.closed_form == "Gaussian2D" and model.base is None:
        data["v"] = np.exp(data["x2"])
    return PathBatch(Records(data), seed, paths, scheme, T, measure)


def estimate(batch: PathBatch, functional: Callable[[Mapping], np.ndarray]) -> McEstimate:
    vals = np.asarray(functional(batch.records), dtype=float)
    if vals.ndim == 0:
        vals = np.full(batch.paths, float(vals))
    if vals.shape != (batch.paths,):
        raise InvalidArgument("functional must return one value per path")
    if not np.all(np.isfinite(vals)):
        raise SimulationError("functional produced non-finite values")
    if np.all(vals == vals[0]):
        return McEstimate(float(vals[0]), 0.0, batch.paths, batch.seed)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(batch.paths)) if batch.paths > 1 else 0.0
    return McEstimate(mean, se, batch.paths, batch.seed)
