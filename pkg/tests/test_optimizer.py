import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stathedge import models
from stathedge import optimizer as opt
from stathedge.errors import DegenerateSystemError, GridError, InvalidArgument
from stathedge.experiments import solve_discrete_case
from stathedge.mc import estimate, simulate
from stathedge.moments import DiscreteMoments, continuous_moments, discrete_moments
from stathedge.payoffs import (ContinuousBand, CorrelatedCall, DiscreteStrikes, GenericEuropean,
                               InstrumentSet)

from oracles import LognormalPsi, brute_force_hedge

GBM = dict(mu=0.1, sigma=0.2, T=0.5)


def _moments(psi, gamma, ztilde):
    n = len(gamma)
    inst = InstrumentSet(1.0, DiscreteStrikes(tuple(np.linspace(0.8, 1.2, n))), False, False)
    return DiscreteMoments(psi, gamma, ztilde, [f"x{i}" for i in range(n)], np.zeros(n), 0.0, 1.0, 1.0, inst)


@st.composite
def qp_problems(draw):
    n = draw(st.integers(2, 6))
    A = draw(arrays(float, (n, n), elements=st.floats(-1, 1)))
    psi = A @ A.T + 0.1 * np.eye(n)
    gamma = draw(arrays(float, n, elements=st.floats(-1, 1)))
    zt = draw(arrays(float, n, elements=st.floats(0.05, 1)))
    frac = draw(st.floats(-1.0, 1.5))
    return _moments(psi, gamma, zt), frac


@given(qp_problems(), st.integers(0, 2**31))
def test_first_order_optimality(problem, seed):
    m, frac = problem
    unc = opt.solve_discrete(m)
    C = frac * abs(unc.cost) + (unc.cost if frac > 1 else 0.0)
    pf = opt.solve_discrete(m, C)
    assert pf.stationarity <= 1e-8 * max(1.0, np.abs(m.gamma).max(), abs(pf.lam))
    rng = np.random.default_rng(seed)
    J0 = opt.discrete_objective(m, pf.weights)
    for _ in range(20):
        d = rng.standard_normal(m.n) * 1e-4
        if pf.branch == "constrained" and m.ztilde @ d > 0:
            d -= (m.ztilde @ d) / (m.ztilde @ m.ztilde) * m.ztilde
        assert opt.discrete_objective(m, pf.weights + d) >= J0 - 1e-12


@given(qp_problems())
def test_branch_consistency(problem):
    m, frac = problem
    unc = opt.solve_discrete(m)
    C = frac * unc.cost
    pf = opt.solve_discrete(m, C)
    if unc.cost <= C:
        assert pf.branch == "unconstrained"
        assert np.array_equal(pf.weights, unc.weights)
        assert pf.lam == 0.0
    else:
        assert pf.branch == "constrained"
        assert pf.lam < 0
        assert abs(pf.cost - C) <= 1e-10 * max(1.0, abs(C))
        assert pf.objective >= unc.objective - 1e-12
    assert pf.slackness <= 1e-8


@given(qp_problems(), st.floats(0.1, 10.0))
def test_scale_equivariance(problem, c):
    m, frac = problem
    C = frac * opt.solve_discrete(m).cost
    base = opt.solve_discrete(m, C)
    scaled = opt.solve_discrete(_moments(m.psi, c * m.gamma, m.ztilde), c * C)
    assert scaled.branch == base.branch or abs(base.cost - C) < 1e-9
    assert np.allclose(scaled.weights, c * base.weights, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("C", [None, 0.75])
def test_discrete_matches_brute_force(fig2_model, C):
    inst = InstrumentSet(1.0, DiscreteStrikes((0.8, 0.9, 1.1, 1.2)))
    m = discrete_moments(fig2_model, inst, CorrelatedCall(1.0), 1.0)
    unc = opt.solve_discrete(m)
    cap = None if C is None else C * unc.cost
    pf = opt.solve_discrete(m, cap)
    ref = brute_force_hedge(m.psi, m.gamma, m.ztilde, cap)
    assert np.max(np.abs(pf.weights - ref)) < 1e-6
    if cap is not None:
        assert abs(pf.cost - cap) < 1e-10


def test_bond_only_error_is_variance():
    model = models.correlated_gbm(0.1, 0.1, 0.2, 0.2, 0.5)
    inst = InstrumentSet(1.0, DiscreteStrikes(()), True, False)
    run = solve_discrete_case(model, CorrelatedCall(1.0), inst, 0.5)
    m = run.moments
    assert run.portfolio.weights[0] == pytest.approx(m.xi, rel=1e-12)
    assert run.portfolio.objective == pytest.approx(m.xi2 - m.xi**2, rel=1e-9)
    s = np.linspace(0.5, 1.5, 11)
    assert np.allclose(opt.portfolio_profile(run.portfolio, s), m.xi)


def test_replicable_claim_has_zero_error():
    model = models.gbm(0.1, 0.2)
    inst = InstrumentSet(1.0, DiscreteStrikes((0.9, 1.1)), True, True)
    claim = GenericEuropean(lambda s: 0.3 + 2 * (s - 1) - np.maximum(0.9 - s, 0) + 0.5 * np.maximum(s - 1.1, 0))
    run = solve_discrete_case(model, claim, inst, 0.5)
    assert np.allclose(run.portfolio.weights, [0.3, 2.0, -1.0, 0.5], atol=1e-7)
    assert run.portfolio.objective < 1e-10


@pytest.fixture(scope="module")
def carr_madan_quadratic():
    claim = GenericEuropean(lambda s: (s - 1) ** 2, lambda s: 2 * (s - 1), lambda s: 2 + 0 * s)
    with pytest.warns(UserWarning, match="band too wide"):
        cm = continuous_moments(models.gbm(GBM["mu"], GBM["sigma"]), ContinuousBand(0.2, 3.0, 401),
                                claim, GBM["T"])
    return claim, cm, opt.solve_continuous_unconstrained(cm)


def test_carr_madan_quadratic(carr_madan_quadratic):
    claim, cm, pf = carr_madan_quadratic
    q, p, d2 = opt.carr_madan_weights(claim, 1.0, cm.K)
    assert (q, p) == (0.0, 0.0)
    assert abs(pf.q - q) < 1e-3 and abs(pf.p - p) < 1e-3
    inner = slice(10, -10)
    assert np.max(np.abs(pf.pi[inner] - d2[inner])) < 1e-2
    s = np.linspace(0.6, 1.6, 21)
    assert np.max(np.abs(opt.portfolio_profile(pf, s) - claim.value(s))) < 1e-4


def test_carr_madan_identity_claim():
    claim = GenericEuropean(lambda s: s)
    cm = continuous_moments(models.gbm(0.1, 0.2), ContinuousBand(0.5, 1.5, 201), claim, 0.5)
    pf = opt.solve_continuous_unconstrained(cm)
    assert pf.q == pytest.approx(1.0, abs=1e-8)
    assert pf.p == pytest.approx(1.0, abs=1e-8)
    assert np.max(np.abs(pf.pi)) < 1e-8


def test_softplus_call_is_nearly_replicated():
    w = 0.05
    claim = GenericEuropean(lambda s: w * np.logaddexp(0, (s - 1.0) / w))
    cm = continuous_moments(models.gbm(0.1, 0.2), ContinuousBand(0.3, 2.5, 401), claim, 0.5)
    pf = opt.solve_continuous_unconstrained(cm)
    assert pf.objective <= 1e-4
    b = simulate(models.gbm(0.1, 0.2), "P", None, 200_000, 3, 0.5)
    e = estimate(b, lambda r: (opt.portfolio_profile(pf, r["s"]) - claim.value(r["s"])) ** 2)
    assert e.value <= 1e-4


def test_continuous_first_order_in_q_and_p(fig1_moments):
    cm = fig1_moments[0.7]
    for pf in (opt.solve_continuous_unconstrained(cm), opt.solve_continuous_constrained(cm, 0.05)):
        h = 1e-4
        for dq, dp in ((h, 0), (0, h)):
            lo = opt.continuous_objective(cm, pf.pi, pf.q - dq, pf.p - dp)
            hi = opt.continuous_objective(cm, pf.pi, pf.q + dq, pf.p + dp)
            grad = (hi - lo) / (2 * h)
            if pf.branch == "constrained" and dq:
                grad -= pf.lam  # cost enters through q
            assert abs(grad) < 1e-6


def test_continuous_constraint_binds(fig1_moments):
    cm = fig1_moments[0.55]
    unc = opt.solve_continuous_unconstrained(cm)
    costs = [f * unc.cost for f in (1.0, 0.75, 0.5)]
    pfs = [opt.solve_continuous_constrained(cm, c) for c in costs]
    assert pfs[0].branch == "unconstrained"
    for pf, c in zip(pfs[1:], costs[1:]):
        assert pf.branch == "constrained" and pf.lam < 0
        assert abs(pf.cost - c) < 1e-10
    J = [pf.objective for pf in pfs]
    assert J[0] < J[1] < J[2]


def test_constraint_inactive_when_loose(fig1_moments):
    cm = fig1_moments[0.9]
    unc = opt.solve_continuous_unconstrained(cm)
    pf = opt.solve_continuous_constrained(cm, unc.cost + 1.0)
    assert pf.branch == "unconstrained" and np.array_equal(pf.pi, unc.pi)
    off = opt.solve_continuous_constrained(cm, opt.CostConstraint(0.0, active=False))
    assert off.branch == "unconstrained"


def test_profile_matches_carr_madan_claim(carr_madan_quadratic):
    claim, cm, pf = carr_madan_quadratic
    s = np.linspace(0.7, 1.4, 15)
    assert np.max(np.abs(opt.portfolio_profile(pf, s) - claim.value(s))) < 1e-4


def test_profile_rejects_nonpositive_grid(carr_madan_quadratic):
    with pytest.raises(InvalidArgument):
        opt.portfolio_profile(carr_madan_quadratic[2], [0.0, 1.0])


def test_integral_equation_zero_and_roundtrip():
    ln = LognormalPsi(GBM["mu"], GBM["sigma"], GBM["T"])
    K = np.linspace(0.5, 1.5, 401)
    G = ln.density(K)
    assert np.all(opt.integral_equation_solve(np.zeros_like(K), G, K, 1.0) == 0)
    bump = lambda k: np.exp(-0.5 * ((k - 0.8) / 0.05) ** 2) + 0.5 * np.exp(-0.5 * ((k - 1.2) / 0.06) ** 2)
    f = ln.forward(bump, K)
    rec = opt.integral_equation_solve(f, G, K, 1.0)
    trim = int(0.025 * len(K))
    assert np.max(np.abs(rec - bump(K))[trim:-trim]) <= 1e-2
    centred = lambda k: np.exp(-0.5 * ((k - 1.0) / 0.08) ** 2)
    rec = opt.integral_equation_solve(ln.forward(centred, K), G, K, 1.0)
    assert np.max(np.abs(rec - centred(K))[trim:-trim]) <= 1e-2


def test_integral_equation_recovers_claim_second_derivative():
    """With f(K) = E[g(K,S) h(S)] the solution is h'' (here h smooth)."""
    ln = LognormalPsi(GBM["mu"], GBM["sigma"], GBM["T"])
    K = np.linspace(0.5, 1.5, 401)
    h = lambda s: np.sin(2 * s)
    from oracles import _integrate
    f = []
    for k in K:
        if k < 1.0:
            f.append(_integrate(lambda s: (k - s) * h(s) * ln.density(s), 1e-3, k, 40))
        else:
            f.append(_integrate(lambda s: (s - k) * h(s) * ln.density(s), k, 6.0, 80))
    rec = opt.integral_equation_solve(np.array(f), ln.density(K), K, 1.0)
    trim = int(0.025 * len(K))
    # |h''| is up to 4 and does not vanish at S0, where the put/call switch costs accuracy
    assert np.max(np.abs(rec + 4 * np.sin(2 * K))[trim:-trim]) < 5e-2


def test_integral_equation_errors():
    K = np.linspace(0.5, 1.5, 41)
    with pytest.raises(InvalidArgument):
        opt.integral_equation_solve(np.zeros_like(K), np.zeros_like(K), K)
    with pytest.raises(GridError):
        opt.integral_equation_solve(np.zeros_like(K), np.ones_like(K), K, s0=0.52)


def test_grid_errors():
    with pytest.raises(GridError):
        opt.second_derivative(np.zeros(5), 0.1)
    with pytest.raises(GridError):
        opt._grid_step(np.array([0.0, 0.1, 0.3, 0.4, 0.5, 0.6]))


def test_second_derivative_fourth_order():
    errs = []
    for n in (51, 101):
        x = np.linspace(0, 1, n)
        errs.append(np.max(np.abs(opt.second_derivative(np.sin(3 * x), x[1] - x[0]) + 9 * np.sin(3 * x))))
    assert errs[0] / errs[1] > 12


def test_degenerate_terminal_price(fig1_moments):
    from dataclasses import replace
    cm = replace(fig1_moments[0.5], Sigma=fig1_moments[0.5].beta ** 2)
    with pytest.raises(DegenerateSystemError):
        opt.solve_continuous_unconstrained(cm)


def test_orthogonal_cost_vector():
    m = _moments(np.eye(2), np.array([1.0, 1.0]), np.zeros(2))
    m2 = _moments(np.eye(2), np.array([1.0, 1.0]), np.array([1.0, -1.0]))
    assert opt.solve_discrete(m2, -1.0).branch == "constrained"
    with pytest.raises(DegenerateSystemError):
        opt.solve_discrete(_moments(np.eye(2), np.array([1.0, 1.0]), np.zeros(2)), -1.0)
    assert opt.solve_discrete(m, 1.0).branch == "unconstrained"


def test_sign_changes():
    assert opt.sign_changes([1, -1, 1, 0, 1e-12, -2], tol=1e-9) == 3
    assert opt.sign_changes([1, 2, 3]) == 0
