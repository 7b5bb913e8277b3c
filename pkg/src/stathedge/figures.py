"""Data behind the four example figures, written as CSV and optionally plotted."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import experiments as ex
from .csvio import write_csv
from .errors import InvalidArgument
from .models import cev, correlated_gbm, heston, with_running_average
from .payoffs import (ContinuousBand, CorrelatedCall, DiscreteStrikes, GeometricAsianCall,
                      InstrumentSet, LetfCall)

FIG1 = dict(mu1=0.1, mu2=0.1, sigma1=0.2, sigma2=0.2, T=0.5, rhos=(0.5, 0.7, 0.9), rho_cost=0.55)
FIG2 = dict(mu1=0.1, mu2=0.1, sigma1=0.2, sigma2=0.2, T=1.0, rhos=(0.5, 0.7, 0.9), rho_cost=0.9,
            strikes=(0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3))
FIG3 = dict(m=0.1, kappa=1.0, theta=0.04, delta=0.1, rho=0.0, x1=0.0, x2=0.04, T=0.25, kprime=1.0,
            l0=1.0, ells=(3, -3), strikes=tuple(np.round(np.arange(0.825, 1.2, 0.05), 6)))
FIG4 = dict(m=0.1, delta=0.2, eta=0.7, x1=0.0, T=1.0, kprime=1.0)
FRACTIONS = (1.0, 0.75, 0.5)
PROFILE = (0.5, 1.5, 201)


def _payoff_col(s, kprime):
    return np.maximum(s - kprime, 0.0)


def _profile(out: Path, name: str, pf, kprime=None) -> Path:
    cols = ex.profile_columns(pf, PROFILE)
    if kprime is not None:
        cols["claim_payoff"] = _payoff_col(cols["S_T"], kprime)
    return write_csv(out / name, cols)


def figure1(out: Path) -> list[Path]:
    p = FIG1
    band = InstrumentSet(1.0, ContinuousBand(0.5, 1.5, 401), True, True)
    claim = CorrelatedCall(1.0)
    files = []
    for rho in p["rhos"]:
        model = correlated_gbm(p["mu1"], p["mu2"], p["sigma1"], p["sigma2"], rho)
        run = ex.solve_continuous_case(model, claim, band, p["T"])
        files.append(write_csv(out / f"fig1_pi_rho{rho:g}.csv", {"K": run.portfolio.K, "pi_K": run.portfolio.pi},
                               ex.portfolio_meta(run.portfolio)))
        files.append(_profile(out, f"fig1_profile_rho{rho:g}.csv", run.portfolio, 1.0))
    model = correlated_gbm(p["mu1"], p["mu2"], p["sigma1"], p["sigma2"], p["rho_cost"])
    for frac in FRACTIONS:
        run = ex.solve_continuous_case(model, claim, band, p["T"], fraction=frac)
        tag = f"rho{p['rho_cost']:g}_C{frac:g}"
        files.append(write_csv(out / f"fig1_pi_{tag}.csv", {"K": run.portfolio.K, "pi_K": run.portfolio.pi},
                               ex.portfolio_meta(run.portfolio)))
        files.append(_profile(out, f"fig1_profile_{tag}.csv", run.portfolio, 1.0))
    return files


def figure2(out: Path) -> list[Path]:
    p = FIG2
    inst = InstrumentSet(1.0, DiscreteStrikes(p["strikes"]), True, False)
    claim = CorrelatedCall(1.0)
    files = []
    for rho in p["rhos"]:
        model = correlated_gbm(p["mu1"], p["mu2"], p["sigma1"], p["sigma2"], rho)
        run = ex.solve_discrete_case(model, claim, inst, p["T"])
        files.append(write_csv(out / f"fig2_weights_rho{rho:g}.csv", ex.weights_columns(run.portfolio),
                               ex.portfolio_meta(run.portfolio)))
        files.append(_profile(out, f"fig2_profile_rho{rho:g}.csv", run.portfolio, 1.0))
    model = correlated_gbm(p["mu1"], p["mu2"], p["sigma1"], p["sigma2"], p["rho_cost"])
    for frac in FRACTIONS:
        run = ex.solve_discrete_case(model, claim, inst, p["T"], fraction=frac)
        tag = f"rho{p['rho_cost']:g}_C{frac:g}"
        files.append(write_csv(out / f"fig2_weights_{tag}.csv", ex.weights_columns(run.portfolio),
                               ex.portfolio_meta(run.portfolio)))
        files.append(_profile(out, f"fig2_profile_{tag}.csv", run.portfolio, 1.0))
    return files


def figure3(out: Path) -> list[Path]:
    p = FIG3
    model = heston(p["m"], p["kappa"], p["theta"], p["delta"], p["rho"], p["x1"], p["x2"])
    inst = InstrumentSet(1.0, DiscreteStrikes(p["strikes"]), True, False)
    files = []
    for ell in p["ells"]:
        run = ex.solve_discrete_case(model, LetfCall(p["kprime"], ell, p["l0"]), inst, p["T"])
        files.append(write_csv(out / f"fig3_weights_ell{ell:+d}.csv", ex.weights_columns(run.portfolio),
                               ex.portfolio_meta(run.portfolio)))
        files.append(_profile(out, f"fig3_profile_ell{ell:+d}.csv", run.portfolio))
    return files


def figure4(out: Path) -> list[Path]:
    p = FIG4
    model = with_running_average(cev(p["m"], p["delta"], p["eta"], p["x1"]), p["T"])
    inst = InstrumentSet(1.0, ContinuousBand(0.5, 1.5, 401), True, True)
    run = ex.solve_continuous_case(model, GeometricAsianCall(p["kprime"]), inst, p["T"])
    return [write_csv(out / "fig4_pi.csv", {"K": run.portfolio.K, "pi_K": run.portfolio.pi},
                      ex.portfolio_meta(run.portfolio)),
            _profile(out, "fig4_profile.csv", run.portfolio)]


FIGURES = {1: figure1, 2: figure2, 3: figure3, 4: figure4}


def figure_data(n: int, out: str | Path) -> list[Path]:
    if n not in FIGURES:
        raise InvalidArgument(f"figure must be one of {sorted(FIGURES)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return FIGURES[n](out)


def render(files: list[Path], out: str | Path, name: str) -> Path:
    """Plot every emitted CSV on two panels: strike weights and profiles."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .csvio import read_csv

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    claim_drawn = False
    for f in files:
        _, cols = read_csv(f)
        label = f.stem.split("_", 2)[-1]
        if "pi_K" in cols:
            ax1.plot(cols["K"], cols["pi_K"], label=label)
        elif "pi_i" in cols:
            k = cols["K_i"]
            sel = ~np.isnan(k)
            ax1.plot(k[sel], cols["pi_i"][sel], marker="o", label=label)
        elif "Phi" in cols:
            ax2.plot(cols["S_T"], cols["Phi"], label=label)
            if "claim_payoff" in cols and not claim_drawn:
                ax2.plot(cols["S_T"], cols["claim_payoff"], "k-", lw=1.5, label="claim")
                claim_drawn = True
    ax1.set_xlabel("K")
    ax1.set_ylabel("pi")
    ax2.set_xlabel("S_T")
    ax2.set_ylabel("Phi")
    ax1.legend(fontsize=7)
    ax2.legend(fontsize=7)
    fig.tight_layout()
    path = Path(out) / f"{name}.png"
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
