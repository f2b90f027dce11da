import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from abcem.config import bundled_config, parse_config, validate_assembly, with_overrides
from abcem.cross import CrossParams, CrossPopulation
from abcem.engine import (MarketState, Model, SimulationClock, SimulationError, build_model,
                          derive_run_seed, run_simulation, step)
from abcem.harras import HarrasParams, build_lattice, HarrasPopulation
from abcem.lls import LLSGroup, LLSParams, LLSPopulation, ReturnHistory
from abcem.market import (BisectionPrice, BisectionSettings, CrossExponentialPrice, LogPrice,
                          MeanExcessDemand, VolumeExcessDemand)
from abcem.rng import StubRandom


def _config(name, **overrides):
    config = parse_config(bundled_config(name))
    if overrides:
        config = with_overrides(config, overrides)
    return validate_assembly(config)


def test_derive_run_seed_reference():
    # SplitMix64 outputs for state 0 (reference implementation values)
    assert derive_run_seed(0, 0) == 0xE220A8397B1DCDAF
    assert derive_run_seed(0, 1) == 0x6E789E6AA1B965F4


@given(st.integers(0, 2**64 - 1), st.integers(0, 10_000), st.integers(0, 10_000))
def test_derive_run_seed_distinct(master, i, j):
    if i != j:
        assert derive_run_seed(master, i) != derive_run_seed(master, j)
    assert 0 <= derive_run_seed(master, i) < 2**64


def test_clock_validation():
    with pytest.raises(ValueError):
        SimulationClock(0, 0.0, 10)
    with pytest.raises(ValueError):
        SimulationClock(11, 1.0, 10)
    assert SimulationClock(3, 1.0, 10).advanced().step_index == 4


# one step by hand ----------------------------------------------------------


def test_cross_one_step_by_hand():
    dt, theta, kappa, S0, ed_prev, eta = 4e-5, 2.0, 0.2, 1.3, 0.1, 0.7
    sigma = [1.0, 1.0, -1.0, 1.0]
    c = [1e-3, 3.9e-3, 3.99e-3, 0.0]
    m = [1.3, 1.3, 1.3, 1.0]
    alpha = [0.1, 0.2, 0.3, 0.2]
    beta = [2e-3, 3.9e-3, 4e-3, 1e-3]
    pop = CrossPopulation("cross", CrossParams(), sigma, c, m, alpha, beta)
    market = MarketState(S0, S0, ed_prev, ed_prev, SimulationClock(0, dt, 5))
    post = step(market, [pop], MeanExcessDemand(), CrossExponentialPrice(theta, kappa),
                StubRandom(normal=eta))

    ed = (1 + 1 - 1 + 1) / 4
    S1 = S0 * math.exp((1 + theta * 0.5) * math.sqrt(dt) * eta + kappa * (ed - ed_prev))
    assert post.excess_demand == ed
    assert post.price == pytest.approx(S1, rel=1e-12)
    # agent 2 opposes the aggregate: c grows past beta and it switches
    c2 = 3.99e-3 + dt * 0.5
    assert c2 > 4e-3
    exp_sigma = [1.0, 1.0, 1.0, -1.0]  # agent 3: S1 > m * 1.2 = 1.2
    assert S1 > 1.2
    np.testing.assert_array_equal(pop.sigma, exp_sigma)
    np.testing.assert_allclose(pop.c, [1e-3, 3.9e-3, 0.0, 0.0], rtol=1e-12)
    np.testing.assert_allclose(pop.m, [1.3, 1.3, S1, S1], rtol=1e-12)


def test_lls_one_step_by_hand():
    r, dt, D, z, S0 = 0.04, 1.0, 0.2, 0.05, 4.0
    params = LLSParams(groups=(LLSGroup(2, 3),), sigma_gamma=0.1, r=r, z1=z, z2=z,
                       noise_mode="admissible")
    history = ReturnHistory([0.06, 0.05, 0.07])  # all above r: gamma* = 0.99
    w0, n0, g0 = np.array([1000.0, 1200.0]), np.array([100.0, 100.0]), np.array([0.1, 0.2])
    pop = LLSPopulation("lls", params, dt, history, [0, 0], [3], w0.copy(), n0.copy(),
                        g0.copy(), D)
    settings = BisectionSettings(epsilon=1e-300, max_iterations=400, lower_bound=0.01,
                                 upper_bound=100.0, relative_bounds=True, max_expansions=8)
    market = MarketState(S0, S0, 0.0, 0.0, SimulationClock(0, dt, 5))
    rng = StubRandom(normal=[-0.5, -1.0])
    post = step(market, [pop], MeanExcessDemand(), BisectionPrice(settings), rng)

    ed = ((0.1 * 1000 / 4 - 100) + (0.2 * 1200 / 4 - 100)) / 2
    assert post.excess_demand == pytest.approx(ed, rel=1e-12)
    D1 = D * (1 + dt * z)
    g_new = np.array([0.99 - 0.05, 0.99 - 0.1])
    # sum_i g_new_i w_i (1 + dt (1-g_i) r + g_i ((c - S0) + dt D1) / S0) = A + B c
    A = sum(gn * w * (1 + dt * (1 - g) * r + g * (dt * D1 - S0) / S0)
            for gn, w, g in zip(g_new, w0, g0))
    B = sum(gn * w * g / S0 for gn, w, g in zip(g_new, w0, g0))
    S1 = A / (n0.sum() - B)
    assert post.price == pytest.approx(S1, rel=1e-12)
    x = ((S1 - S0) / dt + D1) / S0
    w1 = w0 * (1 + dt * ((1 - g0) * r + g0 * x))
    np.testing.assert_allclose(pop.w, w1, rtol=1e-12)
    np.testing.assert_allclose(pop.gamma, g_new, rtol=1e-12)
    np.testing.assert_allclose(pop.n, g_new * w1 / S1, rtol=1e-12)
    assert pop.n.sum() == pytest.approx(200.0, rel=1e-12)
    assert pop.history.values()[-1] == pytest.approx(x, rel=1e-12)
    assert pop.dividend == pytest.approx(D1, rel=1e-12)
    np.testing.assert_array_equal(pop.gamma_star, [0.99, 0.99])


def test_harras_one_step_by_hand():
    lam, a, S0 = 0.25, 0.95, 1.1
    params = HarrasParams(C1=1.0, lam=lam, alpha=a, g=0.02)
    lattice = build_lattice(4)
    c1, c2, c3 = [0.5, 0.2, 0.9, 0.1], [0.3, 0.8, 0.4, 0.6], [0.7, 0.1, 0.5, 0.2]
    threshold = [0.1, 0.5, 0.05, 1.5]
    k = np.array([[0.1, 0.2, 0.3, 0.4]] * 4) + np.arange(4)[:, None] * 0.05
    E = np.array([[1, -1, 0, 1], [0, 0, 1, 1], [-1, -1, 1, 0], [1, 1, 1, -1]], dtype=float)
    pop = HarrasPopulation("h", params, lattice, c1, c2, c3, threshold, k.copy(), E.copy())
    pop.sigma = np.array([1.0, -1.0, 1.0, 0.0])
    pop.v = np.array([0.02, 0.01, 0.03, 0.0])
    pop.w = np.array([1.0, 0.9, 1.2, 1.0])
    pop.q = np.array([1.0, 1.1, 0.8, 1.0])
    pop.news = 0.3
    pop.E_prev = np.zeros((4, 4))
    pop.rounds = 1
    fb = pop.feedback = type(pop.feedback)(u=0.2, var_ed=0.1, mean_ed=0.01, prev_ed=0.05,
                                            prev_news=-0.4, alpha=a)
    market = MarketState(S0, S0, 0.05, 0.0, SimulationClock(1, 1.0, 5))
    news, eps = 0.8, [0.6, -1.2, 0.1, 2.0]
    post = step(market, [pop], VolumeExcessDemand(lam), LogPrice(),
                StubRandom(normal=[news] + eps))

    ed = (0.02 - 0.01 + 0.03) / (lam * 4)
    S1 = S0 * math.exp(ed)
    assert post.excess_demand == pytest.approx(ed, rel=1e-12)
    assert post.price == pytest.approx(S1, rel=1e-12)
    mean = a * 0.01 + (1 - a) * 0.05
    var = a * 0.1 + (1 - a) * (0.05 - mean) ** 2
    scaled = ed / math.sqrt(var)
    u = a * 0.2 + (1 - a) * (-0.4) * scaled
    k1 = a * k  # previous expectations are zero
    assert pop.feedback.u == pytest.approx(u, rel=1e-12)
    np.testing.assert_allclose(pop.k, k1, rtol=1e-12)
    w = np.array([1.0 - 0.02 * S1, 0.9 + 0.01 * S1, 1.2 - 0.03 * S1, 1.0])
    q = np.array([1.02, 1.09, 0.83, 1.0])
    E1 = np.array([[[1.0, -1.0, 1.0, 0.0][j] for j in row] for row in lattice])
    np.testing.assert_array_equal(pop.E, E1)
    psi = [c1[i] * 0.25 * float(np.dot(k1[i], E1[i])) + c2[i] * u * news + c3[i] * eps[i]
           for i in range(4)]
    sigma = [1.0 if p > t else (-1.0 if p < -t else 0.0) for p, t in zip(psi, threshold)]
    v = [0.02 * w[i] / S1 if s > 0 else (0.02 * q[i] if s < 0 else 0.0)
         for i, s in enumerate(sigma)]
    np.testing.assert_array_equal(pop.sigma, sigma)
    assert len(set(sigma)) > 1
    np.testing.assert_allclose(pop.w, w, rtol=1e-12)
    np.testing.assert_allclose(pop.q, q, rtol=1e-12)
    np.testing.assert_allclose(pop.v, v, rtol=1e-12)


# whole runs ----------------------------------------------------------------


@pytest.mark.parametrize("name", ["cross_base", "cross_sde_f1", "cross_wealth", "harras_basic",
                                  "lls_basic"])
def test_same_seed_same_output(name):
    count = "agents/agent/group/count" if name.startswith("lls") else "agents/agent/count"
    config = _config(name, **{"settings/numSteps": 50, count: 16})
    a, b = run_simulation(config, 3), run_simulation(config, 3)
    for key, values in a.series().items():
        np.testing.assert_array_equal(values, b.series()[key])
    c = run_simulation(config, 4)
    assert not np.array_equal(a.price_series, c.price_series)
    assert np.all(a.price_series > 0)
    assert a.price_series.size == 51 and a.ed_series.size == 51


class _PlainCross(CrossPopulation):
    """Same agents; a subclass is not eligible for the compiled run loop."""


@pytest.mark.parametrize("name", ["cross_base", "cross_theta2", "cross_sde_f1", "cross_sde_f2",
                                  "cross_wealth"])
def test_compiled_loop_matches_generic(name):
    config = _config(name, **{"settings/numSteps": 300, "agents/agent/count": 50})
    seed = derive_run_seed(config.run.seed, 0)
    fused, generic = build_model(config, seed), build_model(config, seed)
    generic.populations[0].__class__ = _PlainCross
    a, b = fused.run(300), generic.run(300)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert a[2].keys() == b[2].keys()
    for key in a[2]:
        np.testing.assert_array_equal(a[2][key], b[2][key])
    assert fused.market.price == generic.market.price


def test_compiled_clearing_matches_generic_run():
    config = _config("lls_basic", **{"settings/numSteps": 100})
    seed = derive_run_seed(config.run.seed, 0)
    fast, slow = build_model(config, seed), build_model(config, seed)
    slow.price_calc.compiled = False
    a, b = fast.run(100), slow.run(100)
    np.testing.assert_array_equal(a[0], b[0])
    for key in a[2]:
        np.testing.assert_array_equal(a[2][key], b[2][key])


def test_series_alignment():
    config = _config("cross_base", **{"settings/numSteps": 20, "agents/agent/count": 10})
    out = run_simulation(config)
    assert out.price_series[0] == config.run.start_price
    # the excess demand of the final state is recorded as well
    sigma_mean = out.observables["cross_position_mean"]
    np.testing.assert_allclose(out.ed_series, sigma_mean, rtol=0, atol=1e-15)


def test_failure_reports_step():
    config = _config("cross_base", **{"settings/numSteps": 5, "agents/agent/count": 4})
    model = build_model(config, 1)
    model.populations[0].__class__ = _PlainCross
    model.price_calc.kappa = 1e6
    model.market = MarketState(1.0, 1.0, 0.0, -1.0, model.market.clock)
    with pytest.raises(SimulationError, match="step 0"):
        model.run(5)


def test_unknown_recording():
    config = _config("cross_base", **{"settings/numSteps": 5, "agents/agent/count": 4})
    model = build_model(config, 1)
    model.recording = ("nope",)
    with pytest.raises(SimulationError):
        model.observable_names()
