import numpy as np
import pytest
from scipy import integrate, stats
from hypothesis import given
from hypothesis import strategies as st

from stathedge import models
from stathedge.density import (ExpansionSpec, density_approx, exact_density, expansion_operator,
                               expectation_approx, taylor_coefficients)
from stathedge.errors import (EllipticityError, InvalidArgument, UnsupportedModelError,
                              UnsupportedOrderError)

CEV = dict(m=0.1, delta=0.2, eta=0.7)


def _cev_error(order, T, points=801):
    m = models.cev(**CEV)
    approx = density_approx(m, "P", ExpansionSpec(order), 0.0, m.x0, T)
    exact = exact_density(m, "P", 0.0, m.x0, T)
    mu, sd = approx.kernel.mean[0], approx.kernel.std[0]
    y = np.linspace(mu - 6 * sd, mu + 6 * sd, points)
    return float(np.max(np.abs(approx(y) - exact(y))))


@pytest.mark.parametrize("model", [
    models.gbm(0.1, 0.2),
    models.correlated_gbm(0.1, 0.05, 0.2, 0.3, 0.7),
    models.with_running_average(models.gbm(0.1, 0.2), 1.0),
])
def test_constant_coefficient_models_are_exact_at_order0(model):
    T = 0.7
    approx = density_approx(model, "P", ExpansionSpec(2), 0.0, model.x0, T)
    exact = exact_density(model, "P", 0.0, model.x0, T)
    axes = approx.grid(5.0, 41)
    if model.dim == 1:
        y = axes[0]
    else:
        Y1, Y2 = np.meshgrid(*axes, indexing="ij")
        y = np.stack([Y1, Y2])
    assert np.max(np.abs(approx(y) - exact(y))) <= 1e-9 * np.max(exact(y))
    assert all(op.is_zero(1e-12) for op in approx.operators)


def test_cev_error_decreases_with_order():
    errs = [_cev_error(n, 1.0) for n in range(3)]
    assert errs[0] > errs[1] > errs[2]


def test_cev_error_shrinks_with_maturity():
    Ts = np.array([0.1, 0.2, 0.4])
    errs = np.array([_cev_error(1, T) for T in Ts])
    slope = np.polyfit(np.log(Ts), np.log(errs), 1)[0]
    assert slope >= 0.5


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_expansion_normalization(order):
    m = models.cev(**CEV)
    approx = density_approx(m, "P", ExpansionSpec(order), 0.0, m.x0, 1.0)
    assert approx.normalization() == pytest.approx(1.0, abs=1e-3)


def test_asian_cev_normalization():
    m = models.with_running_average(models.cev(**CEV), 1.0)
    approx = density_approx(m, "P", ExpansionSpec(2), 0.0, m.x0, 1.0)
    assert approx.normalization(8.0, 201) == pytest.approx(1.0, abs=1e-3)


def test_cev_exact_mass_with_atom():
    m = models.cev(**CEV)
    ex = exact_density(m, "P", 0.0, m.x0, 1.0)
    mass, _ = integrate.quad(lambda y: float(ex(np.array([y]))), -12.0, 3.0, limit=400)
    assert 0.999 <= mass + ex.atom <= 1.0 + 1e-9
    assert 0.0 <= ex.atom < 1e-6


def test_cev_eta_one_is_lognormal():
    m = models.cev(0.1, 0.2, 1.0)
    a = exact_density(m, "P", 0.0, m.x0, 1.0)
    b = exact_density(models.gbm(0.1, 0.2), "P", 0.0, (0.0,), 1.0)
    y = np.linspace(-1, 1, 11)
    assert np.allclose(a(y), b(y))


def test_expectation_matches_black_scholes():
    m = models.gbm(0.0, 0.2)
    call = expectation_approx(m, "Q", ExpansionSpec(2), lambda y: np.maximum(np.exp(y[0]) - 1.1, 0.0),
                              0.0, m.x0, 0.5, breakpoints=(np.log(1.1),))
    d1 = (np.log(1 / 1.1) + 0.5 * 0.04 * 0.5) / (0.2 * np.sqrt(0.5))
    bs = stats.norm.cdf(d1) - 1.1 * stats.norm.cdf(d1 - 0.2 * np.sqrt(0.5))
    assert call == pytest.approx(bs, abs=1e-10)


@given(st.floats(-0.3, 0.3), st.floats(0.05, 0.6))
def test_taylor_coefficients_of_gbm_are_constant(mu, sigma):
    m = models.gbm(mu, sigma)
    gen = models.generator(m, "P")
    assert taylor_coefficients(gen, np.zeros(1), 0)[(2,)][(0,)] == pytest.approx(0.5 * sigma**2)
    for n in (1, 2):
        for terms in taylor_coefficients(gen, np.zeros(1), n).values():
            assert all(abs(c) < 1e-12 for c in terms.values())


def test_cev_taylor_matches_derivatives():
    m = models.cev(**CEV)
    gen = models.generator(m, "P")
    tc = [taylor_coefficients(gen, np.array([0.2]), n) for n in range(3)]
    a2 = 0.5 * 0.04 * np.exp(2 * (0.7 - 1) * 0.2)
    k = 2 * (0.7 - 1)
    assert tc[0][(2,)][(0,)] == pytest.approx(a2)
    assert tc[1][(2,)][(1,)] == pytest.approx(k * a2)
    assert tc[2][(2,)][(2,)] == pytest.approx(k * k * a2 / 2)
    assert tc[2][(1,)][(2,)] == pytest.approx(-k * k * a2 / 2)


def test_operator_count_matches_compositions():
    m = models.cev(**CEV)
    gen = models.generator(m, "P")
    assert expansion_operator(gen, np.zeros(1), 2, 0.0, 1.0).index_sets == [(2,), (1, 1)]
    assert expansion_operator(gen, np.zeros(1), 3, 0.0, 1.0).n_compositions == 4


def test_errors():
    m = models.cev(**CEV)
    with pytest.raises(UnsupportedOrderError):
        ExpansionSpec(4)
    with pytest.raises(InvalidArgument):
        density_approx(m, "P", ExpansionSpec(1), 1.0, m.x0, 0.5)
    flat = models.custom_model(1, lambda t, x: 0 * x, lambda t, x: 0 * x,
                               lambda t, x: np.zeros((1, 1) + np.shape(x)[1:]), (0.0,))
    with pytest.raises(EllipticityError):
        density_approx(flat, "P", ExpansionSpec(1), 0.0, flat.x0, 1.0)
    with pytest.raises(UnsupportedModelError):
        exact_density(models.heston(0.1, 1.0, 0.04, 0.1, 0.0), "P", 0.0, (0.0, 0.04), 1.0)


def test_custom_model_matches_symbolic():
    sym = models.cev(**CEV)
    cust = models.custom_model(1, sym.drift_p, sym.drift_q, sym.diffusion, sym.x0)
    y = np.linspace(-0.5, 0.5, 21)
    a = density_approx(sym, "P", ExpansionSpec(2), 0.0, sym.x0, 0.5)(y)
    b = density_approx(cust, "P", ExpansionSpec(2), 0.0, cust.x0, 0.5)(y)
    assert np.max(np.abs(a - b)) < 1e-5
