"""Experiment configuration read from TOML.

Example::

    [model]
    kind = "correlated_gbm"
    mu1 = 0.1
    mu2 = 0.1
    sigma1 = 0.2
    sigma2 = 0.2
    rho = 0.9

    [claim]
    kind = "correlated_call"
    kprime = 1.0

    [instruments]
    strikes = [0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3]
    bond = true

    [constraint]
    fraction = 0.75

    [solver]
    maturity = 1.0
    mc_paths = 100000
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgument
from .models import ModelSpec, named_model, with_running_average
from .payoffs import (ContinuousBand, CorrelatedCall, DiscreteStrikes, GenericEuropean,
                      GeometricAsianCall, InstrumentSet, LetfCall)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODEL_PARAMS = {
    "gbm": ("mu", "sigma"),
    "correlated_gbm": ("mu1", "mu2", "sigma1", "sigma2", "rho"),
    "heston": ("m", "kappa", "theta", "delta", "rho"),
    "cev": ("m", "delta", "eta"),
}
MODEL_OPTIONAL = {
    "gbm": ("s0",),
    "correlated_gbm": ("s0", "v0"),
    "heston": ("x1", "x2"),
    "cev": ("x1",),
}
POSITIVE_PARAMS = {"sigma", "sigma1", "sigma2", "kappa", "theta", "delta"}
CLAIM_KINDS = ("correlated_call", "letf_call", "asian_call", "quadratic", "softplus_call")


@dataclass(frozen=True)
class SolverSettings:
    maturity: float = 1.0
    order: int = 2
    grid_size: int = 401
    mc_paths: int = 100_000
    steps_per_year: int = 250
    seed: int = 0
    workers: int = 1
    profile: tuple = (0.5, 1.5, 201)


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    claim: dict
    instruments: dict
    constraint: dict = field(default_factory=dict)
    solver: SolverSettings = SolverSettings()
    output: str = "out"
    source: str | None = None

    def build_model(self) -> ModelSpec:
        p = dict(self.model)
        kind = p.pop("kind")
        avg = p.pop("average", False)
        horizon = p.pop("horizon", self.solver.maturity)
        try:
            m = named_model(kind, **p)
            return with_running_average(m, horizon) if avg else m
        except InvalidArgument as exc:
            raise ConfigError(f"model: {exc}") from None

    def build_claim(self):
        c = self.claim
        kind = c["kind"]
        if kind == "correlated_call":
            return CorrelatedCall(c["kprime"])
        if kind == "asian_call":
            return GeometricAsianCall(c["kprime"])
        if kind == "letf_call":
            return LetfCall(c["kprime"], c["ell"], c.get("l0", 1.0))
        if kind == "quadratic":
            a = c.get("center", 1.0)
            return GenericEuropean(lambda s: (s - a) ** 2, lambda s: 2 * (s - a),
                                   lambda s: 2.0 + 0 * s, f"quadratic_{a:g}")
        k, w = c["kprime"], c.get("width", 1e-3)
        return GenericEuropean(lambda s: w * np.logaddexp(0.0, (s - k) / w),
                               lambda s: 1.0 / (1.0 + np.exp(-(s - k) / w)),
                               lambda s: np.exp(-np.logaddexp(0.0, -(s - k) / w)
                                                - np.logaddexp(0.0, (s - k) / w)) / w,
                               f"softplus_call_{k:g}")

    def s0(self, model: ModelSpec | None = None) -> float:
        if "s0" in self.instruments:
            return float(self.instruments["s0"])
        model = model or self.build_model()
        base = model.base or model
        return float(np.exp(base.x0[0]))

    @property
    def is_discrete(self) -> bool:
        return "strikes" in self.instruments

    def build_instruments(self, model: ModelSpec | None = None) -> InstrumentSet:
        ins = self.instruments
        s0 = self.s0(model)
        try:
            if self.is_discrete:
                st = DiscreteStrikes(tuple(ins["strikes"]))
            else:
                L, R = ins.get("band", (0.5 * s0, 1.5 * s0))
                st = ContinuousBand(float(L), float(R), int(ins.get("grid_size", self.solver.grid_size)))
            return InstrumentSet(s0, st, bool(ins.get("bond", True)), bool(ins.get("forward", False)))
        except InvalidArgument as exc:
            raise ConfigError(f"instruments: {exc}") from None

    def cost_cap(self, unconstrained_cost: float) -> float | None:
        c = self.constraint
        if "C" in c:
            return float(c["C"])
        if "fraction" in c:
            return float(c["fraction"]) * unconstrained_cost
        return None


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _num(table: dict, key: str, path: str, required: bool = True, positive: bool = False):
    if key not in table:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return None
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {type(v).__name__}")
    if not np.isfinite(v):
        raise ConfigError(f"{path}.{key}: must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{path}.{key}: must be positive")
    return float(v)


def _int(table: dict, key: str, path: str, default: int, minimum: int = 1) -> int:
    v = table.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer")
    if v < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}")
    return v


def _table(raw: dict, key: str, required: bool = True) -> dict:
    if key not in raw:
        if required:
            raise ConfigError(f"{key}: missing required block")
        return {}
    t = raw[key]
    if not isinstance(t, dict):
        raise ConfigError(f"{key}: expected a table")
    return dict(t)


def _check_model(m: dict) -> dict:
    kind = m.get("kind")
    if kind not in MODEL_PARAMS:
        raise ConfigError(f"model.kind: expected one of {sorted(MODEL_PARAMS)}, got {kind!r}")
    allowed = set(MODEL_PARAMS[kind]) | set(MODEL_OPTIONAL[kind]) | {"kind", "average", "horizon"}
    for k in m:
        if k not in allowed:
            raise ConfigError(f"model.{k}: unknown field for kind {kind!r}")
    for k in MODEL_PARAMS[kind]:
        _num(m, k, "model", positive=k in POSITIVE_PARAMS)
    if "rho" in m and not -1.0 <= m["rho"] <= 1.0:
        raise ConfigError("model.rho: must lie in [-1, 1]")
    for k in MODEL_OPTIONAL[kind]:
        _num(m, k, "model", required=False)
    if "average" in m and not isinstance(m["average"], bool):
        raise ConfigError("model.average: expected a boolean")
    _num(m, "horizon", "model", required=False, positive=True)
    return m


def _check_claim(c: dict) -> dict:
    kind = c.get("kind")
    if kind not in CLAIM_KINDS:
        raise ConfigError(f"claim.kind: expected one of {list(CLAIM_KINDS)}, got {kind!r}")
    if kind != "quadratic":
        _num(c, "kprime", "claim", positive=True)
    if kind == "letf_call":
        _num(c, "ell", "claim")
        _num(c, "l0", "claim", required=False, positive=True)
    if kind == "softplus_call":
        _num(c, "width", "claim", required=False, positive=True)
    if kind == "quadratic":
        _num(c, "center", "claim", required=False)
    return c


def _check_instruments(ins: dict) -> dict:
    if "strikes" in ins and "band" in ins:
        raise ConfigError("instruments: give either strikes or band, not both")
    if "strikes" in ins:
        ks = ins["strikes"]
        if not isinstance(ks, list) or not ks:
            raise ConfigError("instruments.strikes: expected a nonempty list")
        for i, k in enumerate(ks):
            if isinstance(k, bool) or not isinstance(k, (int, float)) or k <= 0:
                raise ConfigError(f"instruments.strikes[{i}]: expected a positive number")
    if "band" in ins:
        b = ins["band"]
        if not (isinstance(b, list) and len(b) == 2 and all(isinstance(v, (int, float)) for v in b)):
            raise ConfigError("instruments.band: expected [L, R]")
        if not 0 < b[0] < b[1]:
            raise ConfigError("instruments.band: need 0 < L < R")
    _num(ins, "s0", "instruments", required=False, positive=True)
    if "grid_size" in ins:
        _int(ins, "grid_size", "instruments", 401, minimum=51)
    for k in ("bond", "forward"):
        if k in ins and not isinstance(ins[k], bool):
            raise ConfigError(f"instruments.{k}: expected a boolean")
    return ins


def _check_constraint(c: dict) -> dict:
    if "C" in c and "fraction" in c:
        raise ConfigError("constraint: give either C or fraction, not both")
    _num(c, "C", "constraint", required=False)
    f = _num(c, "fraction", "constraint", required=False)
    if f is not None and not 0 < f <= 1:
        raise ConfigError("constraint.fraction: must lie in (0, 1]")
    return c


def _solver(s: dict) -> SolverSettings:
    d = SolverSettings()
    prof = s.get("profile", list(d.profile))
    if not (isinstance(prof, list) and len(prof) == 3):
        raise ConfigError("solver.profile: expected [lo, hi, n]")
    if not (0 < prof[0] < prof[1]) or not isinstance(prof[2], int) or prof[2] < 2:
        raise ConfigError("solver.profile: need 0 < lo < hi and integer n >= 2")
    seed = _int(s, "seed", "solver", d.seed, minimum=0)
    if seed >= 2**64:
        raise ConfigError("solver.seed: must fit in 64 bits")
    order = _int(s, "order", "solver", d.order, minimum=0)
    if order > 3:
        raise ConfigError("solver.order: expansion order must be <= 3")
    return SolverSettings(
        maturity=_num(s, "maturity", "solver", required=False, positive=True) or d.maturity,
        order=order,
        grid_size=_int(s, "grid_size", "solver", d.grid_size, minimum=51),
        mc_paths=_int(s, "mc_paths", "solver", d.mc_paths, minimum=1000),
        steps_per_year=_int(s, "steps_per_year", "solver", d.steps_per_year),
        seed=seed,
        workers=_int(s, "workers", "solver", d.workers),
        profile=(float(prof[0]), float(prof[1]), int(prof[2])),
    )


def parse_config(raw: dict, source: str | None = None) -> ExperimentConfig:
    known = {"model", "claim", "instruments", "constraint", "solver", "output"}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{k}: unknown block")
    model = _check_model(_table(raw, "model"))
    claim = _check_claim(_table(raw, "claim"))
    ins = _check_instruments(_table(raw, "instruments"))
    cons = _check_constraint(_table(raw, "constraint", required=False))
    solver = _solver(_table(raw, "solver", required=False))
    out = _table(raw, "output", required=False)
    out_dir = out.get("dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir: expected a string")
    return ExperimentConfig(model, claim, ins, cons, solver, out_dir, source)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {str(path)!r} is not valid TOML: {exc}") from None
    return parse_config(raw, str(path))
