"""Experiment runners shared by the CLI and the tests.

Every runner returns plain data; writing files is left to ``write_*`` so
the numbers can be checked without touching disk.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import moments as mo
from . import optimizer as opt
from .config import ExperimentConfig
from .csvio import write_csv
from .errors import InvalidArgument
from .mc import default_scheme, estimate, simulate
from .models import ModelSpec
from .payoffs import InstrumentSet, claim_payoff

MC_ABS_FLOOR = 1e-9


@dataclass
class DiscreteRun:
    model: ModelSpec
    claim: object
    instruments: InstrumentSet
    T: float
    moments: mo.DiscreteMoments
    unconstrained: opt.DiscretePortfolio
    portfolio: opt.DiscretePortfolio


@dataclass
class ContinuousRun:
    model: ModelSpec
    claim: object
    instruments: InstrumentSet
    T: float
    moments: mo.ContinuousMoments
    unconstrained: opt.ContinuousPortfolio
    portfolio: opt.ContinuousPortfolio


def solve_discrete_case(model, claim, instruments, T, C=None, fraction=None, order=2) -> DiscreteRun:
    m = mo.discrete_moments(model, instruments, claim, T, order)
    unc = opt.solve_discrete(m)
    cap = C if C is not None else (fraction * unc.cost if fraction is not None else None)
    pf = unc if cap is None else opt.solve_discrete(m, cap)
    return DiscreteRun(model, claim, instruments, T, m, unc, pf)


def solve_continuous_case(model, claim, instruments, T, C=None, fraction=None, order=2) -> ContinuousRun:
    m = mo.continuous_moments(model, instruments, claim, T, order=order)
    unc = opt.solve_continuous_unconstrained(m)
    cap = C if C is not None else (fraction * unc.cost if fraction is not None else None)
    pf = unc if cap is None else opt.solve_continuous_constrained(m, cap)
    return ContinuousRun(model, claim, instruments, T, m, unc, pf)


def run_config(cfg: ExperimentConfig, kind: str | None = None):
    model = cfg.build_model()
    claim = cfg.build_claim()
    inst = cfg.build_instruments(model)
    kind = kind or ("discrete" if inst.is_discrete else "continuous")
    if (kind == "discrete") != inst.is_discrete:
        need = "instruments.strikes" if kind == "discrete" else "instruments.band"
        raise InvalidArgument(f"{kind} hedge needs {need}")
    c = cfg.constraint
    solve = solve_discrete_case if kind == "discrete" else solve_continuous_case
    return solve(model, claim, inst, cfg.solver.maturity, c.get("C"), c.get("fraction"), cfg.solver.order)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def portfolio_meta(pf) -> dict:
    meta = {"branch": pf.branch, "lambda": pf.lam, "cost": pf.cost, "J": pf.objective}
    if isinstance(pf, opt.ContinuousPortfolio):
        meta = {"q": pf.q, "p": pf.p, **meta}
    if pf.C is not None:
        meta["C"] = pf.C
    return meta


def weights_columns(pf: opt.DiscretePortfolio) -> dict:
    inst = pf.instruments
    ks = [None] * (int(inst.includes_bond) + int(inst.includes_forward)) + list(inst.strikes.strikes)
    return {"instrument": list(pf.labels), "K_i": ks, "pi_i": pf.weights}


def write_discrete(run: DiscreteRun, out: Path, stem: str = "") -> list[Path]:
    m = run.moments
    files = [write_csv(out / f"{stem}moments.csv",
                       {"instrument": list(m.labels), "gamma": m.gamma, "ztilde": m.ztilde,
                        **{f"psi_{lab}": m.psi[:, j] for j, lab in enumerate(m.labels)}},
                       {"xi": m.xi, "xi2": m.xi2}),
             write_csv(out / f"{stem}weights.csv", weights_columns(run.portfolio),
                       portfolio_meta(run.portfolio))]
    return files


def write_continuous(run: ContinuousRun, out: Path, stem: str = "") -> list[Path]:
    m = run.moments
    return [write_csv(out / f"{stem}moments.csv", m.columns(),
                      {"beta": m.beta, "Sigma": m.Sigma, "xi": m.xi, "theta": m.theta, "xi2": m.xi2}),
            write_csv(out / f"{stem}pi.csv", {"K": run.portfolio.K, "pi_K": run.portfolio.pi},
                      portfolio_meta(run.portfolio))]


def profile_columns(pf, grid) -> dict:
    s = np.linspace(*grid[:2], int(grid[2]))
    return {"S_T": s, "Phi": opt.portfolio_profile(pf, s)}


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    target: float
    std_error: float
    passed: bool


def _mc_check(name, batch, fn, target, n_se=3.0) -> Check:
    e = estimate(batch, fn)
    ok = abs(e.value - target) <= n_se * e.std_error + MC_ABS_FLOOR
    return Check(name, e.value, target, e.std_error, bool(ok))


def validate_run(run, paths: int, seed: int, workers: int = 1, steps_per_year: int = 250) -> list[Check]:
    """Solver diagnostics plus MC cross-checks of the moments and of J."""
    model, claim, T = run.model, run.claim, run.T
    scheme = default_scheme(model, steps_per_year)
    bp = simulate(model, "P", scheme, paths, seed, T, workers)
    bq = simulate(model, "Q", scheme, paths, seed + 1, T, workers)
    pay = lambda r: claim_payoff(claim, r)
    checks = []
    pf = run.portfolio
    if isinstance(run, DiscreteRun):
        m = run.moments
        checks.append(Check("kkt_stationarity", pf.stationarity, 0.0, 0.0, pf.stationarity <= 1e-8))
        checks.append(Check("kkt_slackness", pf.slackness, 0.0, 0.0, pf.slackness <= 1e-8))
        Z = lambda r: run.instruments.terminal_values(r["s"])
        checks.append(_mc_check("xi", bp, pay, m.xi))
        for i, lab in enumerate(m.labels):
            checks.append(_mc_check(f"gamma_{lab}", bp, lambda r, i=i: Z(r)[i] * pay(r), m.gamma[i]))
            checks.append(_mc_check(f"ztilde_{lab}", bq, lambda r, i=i: Z(r)[i], m.ztilde[i]))
    else:
        m = run.moments
        checks.append(_mc_check("xi", bp, pay, m.xi))
        checks.append(_mc_check("beta", bp, lambda r: r["s"] - m.s0, m.beta))
    if pf.C is not None:
        ok = pf.branch == "unconstrained" or abs(pf.cost - pf.C) <= 1e-6
        checks.append(Check("cost_cap", pf.cost, pf.C, 0.0, bool(ok and pf.cost <= pf.C + 1e-6)))
    checks.append(_mc_check("J", bp, lambda r: (opt.portfolio_profile(pf, r["s"]) - pay(r)) ** 2,
                            opt.hedge_error(run.moments, pf)))
    return checks


def write_checks(checks: list[Check], path: Path) -> Path:
    return write_csv(path, {"check": [c.name for c in checks], "value": [c.value for c in checks],
                            "target": [c.target for c in checks],
                            "std_error": [c.std_error for c in checks],
                            "passed": [c.passed for c in checks]})
