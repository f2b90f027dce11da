import numpy as np
import pytest
from hypothesis import given, strategies as st

from abcem.cross import (CrossAgent, CrossParams, _update_kernel, inaction_interval,
                         init_cross_population, update_cross_agent, update_cross_wealth,
                         update_herding_pressure)
from abcem.rng import RandomStream, StubRandom

DT = 4e-5


def test_init_ranges():
    pop = init_cross_population(1000, CrossParams(), RandomStream.from_seed(1), 1.0, DT)
    assert pop.size == 1000
    assert np.all((pop.alpha >= 0.1) & (pop.alpha < 0.3))
    assert np.all((pop.beta >= 1e-3) & (pop.beta < 4e-3))
    assert np.all((pop.c >= 1e-3) & (pop.c < 4e-3))
    assert set(np.unique(pop.sigma)) == {-1.0, 1.0}
    assert np.all(pop.m == 1.0)
    assert pop.w is None


def test_init_with_stub():
    pop = init_cross_population(5, CrossParams(wealth=True), StubRandom(uniform=0.5), 2.0, DT)
    np.testing.assert_array_equal(pop.alpha, np.full(5, 0.2))
    np.testing.assert_allclose(pop.beta, np.full(5, 2.5e-3))
    np.testing.assert_allclose(pop.c, np.full(5, 2.5e-3))
    np.testing.assert_array_equal(pop.sigma, np.ones(5))
    np.testing.assert_array_equal(pop.w, np.ones(5))


def test_init_single_and_invalid():
    assert init_cross_population(1, CrossParams(), RandomStream.from_seed(1), 1.0, DT).size == 1
    with pytest.raises(ValueError):
        init_cross_population(0, CrossParams(), RandomStream.from_seed(1), 1.0, DT)
    with pytest.raises(ValueError):
        CrossParams(A1=0.3, A2=0.1)
    with pytest.raises(ValueError):
        CrossParams(b1=100, b2=25)


def test_inaction_interval():
    assert inaction_interval(1.0, 0.1) == pytest.approx((0.909091, 1.1), abs=1e-6)
    assert inaction_interval(2.0, 0.3) == pytest.approx((1.538462, 2.6), abs=1e-6)
    lo, hi = inaction_interval(1.0, 1e-12)
    assert hi - lo < 1e-11


@given(st.floats(0.01, 100), st.floats(1e-6, 1.0))
def test_inaction_interval_contains_center(m, alpha):
    lo, hi = inaction_interval(m, alpha)
    assert lo < m < hi


def test_herding_pressure():
    assert update_herding_pressure(1e-3, 1, -0.5, DT) == pytest.approx(1.02e-3)
    assert update_herding_pressure(1e-3, 1, 0.3, DT) == 1e-3
    assert update_herding_pressure(1e-3, -1, 0.0, DT) == 1e-3


@given(st.floats(0, 1), st.sampled_from([-1, 1]), st.floats(-1, 1))
def test_herding_pressure_monotone(c, sigma, ed):
    assert update_herding_pressure(c, sigma, ed, DT) >= c


def test_update_agent_rules():
    a = CrossAgent(sigma=1, c=5e-3, m=1.0, alpha=0.1, beta=4e-3)
    assert update_cross_agent(a, 1.0, 0.2, DT)
    assert (a.sigma, a.c, a.m) == (-1, 0.0, 1.0)
    b = CrossAgent(sigma=1, c=0.0, m=1.0, alpha=0.1, beta=4e-3)
    assert update_cross_agent(b, 1.2, 0.2, DT)
    assert (b.sigma, b.c, b.m) == (-1, 0.0, 1.2)
    c = CrossAgent(sigma=1, c=0.0, m=1.0, alpha=0.1, beta=4e-3)
    assert not update_cross_agent(c, 1.05, 0.2, DT)
    assert (c.sigma, c.c, c.m) == (1, 0.0, 1.0)


@given(st.lists(st.tuples(st.sampled_from([-1.0, 1.0]), st.floats(0, 5e-3), st.floats(0.5, 2.0),
                          st.floats(0.1, 0.3), st.floats(1e-3, 4e-3)), min_size=1, max_size=30),
       st.floats(0.5, 2.0), st.floats(-1, 1))
def test_kernel_matches_scalar_rule(agents, S, ed):
    sigma, c, m, alpha, beta = (np.array(col) for col in zip(*agents))
    expected = [CrossAgent(int(s), ci, mi, ai, bi) for s, ci, mi, ai, bi in agents]
    switched = sum(update_cross_agent(a, S, ed, DT) for a in expected)
    assert _update_kernel(sigma, c, m, alpha, beta, S, ed, DT) == switched
    np.testing.assert_array_equal(sigma, [a.sigma for a in expected])
    np.testing.assert_allclose(c, [a.c for a in expected], rtol=0, atol=1e-18)
    np.testing.assert_array_equal(m, [a.m for a in expected])


def test_wealth_update():
    assert update_cross_wealth(2.0, 1.0, 0.01, 1.3, 1.3, 1.0) == 2.0
    assert update_cross_wealth(1.0, 0.0, 0.01, 1.0, 1.0, 1.0) == pytest.approx(1.01)
    assert update_cross_wealth(1.0, 0.5, 0.01, 1.1, 1.0, 1.0) == pytest.approx(1.050455, abs=1e-6)
    with pytest.raises(FloatingPointError):
        update_cross_wealth(1.0, 0.5, 0.01, 0.0, 1.0, 1.0)
