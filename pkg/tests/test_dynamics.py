import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridmpc import DelayConfig, OrderBuffer, SystemState, build_model, step
from gridmpc.dynamics import delay_steps, push_order


@pytest.mark.parametrize("tau, dt, d", [(45.0, 2.0, 22), (1.0, 2.0, 0), (2.0, 2.0, 0),
                                        (3.0, 2.0, 1), (4.0, 2.0, 1), (4.1, 2.0, 2),
                                        (0.3, 0.1, 2)])
def test_delay_steps(tau, dt, d):
    assert delay_steps(tau, dt) == d


def test_delay_validation():
    with pytest.raises(ValueError):
        delay_steps(0.0, 2.0)
    with pytest.raises(ValueError):
        delay_steps(1.0, 0.0)
    with pytest.raises(ValueError, match="shorter"):
        DelayConfig(2.0, 1.0, 45.0)


def test_step_matches_injection_bookkeeping(zone, delays):
    # hand oracle: flows move with PTDF @ (nodal injection change); curtailment
    # and charging both withdraw injection at their node
    model = build_model(zone, delays)
    rng = np.random.default_rng(3)
    state = SystemState(rng.normal(size=2), [12.0], rng.uniform(0, 5, 2), [4.0])
    u_c, u_b, w = rng.normal(size=2), np.array([2.5]), rng.normal(size=6)
    nxt = step(model, state, u_c, u_b, w)
    delta = w.copy()
    delta[0] -= u_c[0] + u_b[0]
    delta[1] -= u_c[1]
    np.testing.assert_allclose(nxt.flows, state.flows + zone.ptdf @ delta, atol=1e-12)
    np.testing.assert_allclose(nxt.curtailment, state.curtailment + u_c)
    np.testing.assert_allclose(nxt.battery_power, [6.5])
    np.testing.assert_allclose(nxt.battery_energy, [12.0 + 6.5 * 2.0 / 3600.0])


def test_state_vector_round_trip():
    s = SystemState([1.0, 2.0], [3.0], [4.0, 5.0], [6.0])
    back = SystemState.from_vector(s.to_vector(), 2, 1, 2)
    np.testing.assert_array_equal(back.to_vector(), s.to_vector())
    with pytest.raises(ValueError):
        SystemState.from_vector(np.zeros(5), 2, 1, 2)


def test_step_rejects_bad_shapes(zone, delays):
    model = build_model(zone, delays)
    state = SystemState.initial([0.0, 0.0], [1.0], 2)
    with pytest.raises(ValueError):
        step(model, state, np.zeros(3), np.zeros(1), np.zeros(6))
    with pytest.raises(ValueError):
        step(model, state, np.zeros(2), np.zeros(1), np.zeros(5))


@settings(max_examples=50, deadline=None)
@given(d_c=st.integers(0, 6), d_b=st.integers(0, 6),
       orders=st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_order_buffer_is_a_pure_delay(d_c, d_b, orders):
    buf = OrderBuffer(d_c, d_b, 1, 1)
    out_c, out_b = [], []
    for u in orders:
        c, b = push_order(buf, [u], [-u])
        out_c.append(c[0])
        out_b.append(b[0])
    expect = [0.0] * d_c + list(orders)
    assert out_c == expect[:len(orders)]
    expect_b = [0.0] * d_b + [-u for u in orders]
    assert out_b == expect_b[:len(orders)]
    assert buf.curt_matrix().shape == (d_c, 1)
    assert buf.batt_matrix().shape == (d_b, 1)
