import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from stathedge import models
from stathedge.errors import InvalidArgument


def _generator_applied(model, measure, f, x):
    """L f at x, built independently from sympy drift and diffusion."""
    s = model.symbolic
    syms = s.symbols
    dr = s.drift_p if measure == "P" else s.drift_q
    cov = s.diffusion * s.diffusion.T
    d = len(syms)
    expr = sum(dr[i] * sp.diff(f, syms[i]) for i in range(d))
    expr += sum(sp.Rational(1, 2) * cov[i, j] * sp.diff(f, syms[i], syms[j])
                for i in range(d) for j in range(d))
    return float(expr.subs(dict(zip(syms, x))))


@pytest.mark.parametrize("model", [
    models.correlated_gbm(0.1, 0.05, 0.2, 0.3, 0.6),
    models.heston(0.1, 1.0, 0.04, 0.3, -0.5),
])
def test_generator_matches_ito_formula(model):
    gen = models.generator(model, "P")
    x1, x2 = model.symbolic.symbols
    f = sp.sin(x1) * sp.exp(0.5 * x2) + x1**2 * x2
    x = np.array([0.1, 0.05])
    lhs = 0.0
    for alpha, a in gen.a.items():
        der = sp.diff(f, *[v for v, k in zip((x1, x2), alpha) for _ in range(k)])
        lhs += float(a(0.0, x)) * float(der.subs({x1: x[0], x2: x[1]}))
    assert lhs == pytest.approx(_generator_applied(model, "P", f, x), rel=1e-12)


def test_mixed_coefficient_is_full_covariance():
    m = models.correlated_gbm(0.1, 0.1, 0.2, 0.3, 0.5)
    gen = models.generator(m, "P")
    assert gen.a[(1, 1)](0.0, np.zeros(2)) == pytest.approx(0.5 * 0.2 * 0.3)
    assert gen.a[(2, 0)](0.0, np.zeros(2)) == pytest.approx(0.5 * 0.04)


@pytest.mark.parametrize("model", [
    models.gbm(0.1, 0.2),
    models.correlated_gbm(0.1, 0.1, 0.2, 0.2, 0.7),
    models.heston(0.1, 1.0, 0.04, 0.1, 0.0),
    models.cev(0.1, 0.2, 0.7),
])
def test_q_drift_is_martingale(model):
    pts = [(0.0, np.array(model.x0) + 0.1 * k) for k in range(3)]
    assert models.martingale_drift_check(model, pts)


def test_martingale_check_detects_physical_drift():
    m = models.gbm(0.1, 0.2)
    swapped = models.ModelSpec(1, m.drift_q, m.drift_p, m.diffusion, m.x0)
    assert not models.martingale_drift_check(swapped, [(0.0, np.zeros(1))])


@given(st.floats(-0.5, 0.5), st.floats(0.05, 0.8), st.floats(-2, 2))
def test_gbm_log_drift(mu, sigma, x):
    m = models.gbm(mu, sigma)
    assert float(m.drift_p(0.0, np.array([x]))[0]) == pytest.approx(mu - 0.5 * sigma**2)
    assert float(m.drift_q(0.0, np.array([x]))[0]) == pytest.approx(-0.5 * sigma**2)


def test_running_average_drift_is_linear():
    m = models.with_running_average(models.cev(0.1, 0.2, 0.7), 2.0)
    x = np.array([0.3, 0.1])
    assert float(m.drift_p(0.0, x)[1]) == pytest.approx(0.15)
    assert np.allclose(m.linear_drift, [[0, 0], [0.5, 0]])


@pytest.mark.parametrize("kind,kw", [
    ("gbm", {"mu": 0.1}),
    ("heston", {"m": 0.1, "kappa": 1.0}),
    ("nope", {}),
])
def test_named_model_errors(kind, kw):
    with pytest.raises(InvalidArgument):
        models.named_model(kind, **kw)


def test_invalid_parameters():
    with pytest.raises(InvalidArgument):
        models.gbm(0.1, -0.2)
    with pytest.raises(InvalidArgument):
        models.correlated_gbm(0.1, 0.1, 0.2, 0.2, 1.5)
    with pytest.raises(InvalidArgument):
        models.cev(0.1, 0.2, 1.5)
    with pytest.raises(InvalidArgument):
        models.gbm(0.1, 0.2).drift("R")
