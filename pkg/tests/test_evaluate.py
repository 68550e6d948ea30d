import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demandsupply.baselines import EoqParams, eoq_decision, eoq_quantity
from demandsupply.errors import DataError, NumericError
from demandsupply.evaluate import (
    DegenerateSample, confidence_interval, forecast_metrics, merge_ops, paired_ttest, simulate,
)
from demandsupply.supply import C_HOLD, C_SHORT, C_T0, LEAD, STATE_FIELDS, DecisionVector, Supplier


def test_metrics_examples():
    m = forecast_metrics([5.0, 7.0], [5.0, 7.0])
    assert (m.mae, m.rmse, m.mape, m.smape) == (0.0, 0.0, 0.0, 0.0)
    m = forecast_metrics([100.0], [110.0])
    assert (m.mae, m.rmse, m.mape) == (10.0, 10.0, 10.0)
    assert m.smape == pytest.approx(200.0 / 21.0)
    m = forecast_metrics([0.0, 10.0], [0.0, 10.0])
    assert m.mape == 0.0 and m.mape_skipped == 1 and m.smape == 0.0
    with pytest.raises(DataError):
        forecast_metrics([], [])
    with pytest.raises(DataError):
        forecast_metrics([1.0], [1.0, 2.0])


def test_metric_row_headers():
    assert list(forecast_metrics([1.0], [2.0]).as_row()) == ["MAE", "RMSE", "MAPE (%)", "sMAPE (%)"]


finite = st.floats(-1e4, 1e4, allow_nan=False).map(lambda v: round(v, 6))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=40))
def test_rmse_at_least_mae(pairs):
    y, p = map(np.array, zip(*pairs))
    m = forecast_metrics(y, p)
    assert m.rmse >= m.mae - 1e-9 * max(1.0, m.mae)
    assert min(m.mae, m.rmse, m.smape) >= 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 1e3), st.floats(0.0, 1e3)), min_size=1, max_size=30),
       st.floats(1e-3, 1e3))
def test_percentage_metrics_scale_invariant(pairs, k):
    y, p = map(np.array, zip(*pairs))
    a = forecast_metrics(y, p)
    b = forecast_metrics(k * y, k * p)
    assert b.mape == pytest.approx(a.mape, rel=1e-9, abs=1e-9)
    assert b.smape == pytest.approx(a.smape, rel=1e-9, abs=1e-9)


def _states(n, **fields):
    s = np.zeros((n, len(STATE_FIELDS)))
    for name, v in fields.items():
        s[:, STATE_FIELDS.index(name)] = v
    return s


def test_null_scenario():
    res = simulate(np.zeros(5), np.zeros(5), _states(5, cost_holding=1.0, cost_shortage=3.0))
    m = res.metrics
    assert (m.stockout_rate, m.service_level, m.total_cost, m.inventory_cost) == (0.0, 100.0, 0.0, 0.0)


def test_steady_replenishment_ledger():
    st_ = _states(3, cost_holding=0.5, cost_shortage=2.0)
    res = simulate(np.full(3, 10.0), np.full(3, 10.0), st_, initial_stock=10.0, lead_times="zero")
    assert res.metrics.service_level == 100.0
    for row in res.ledger:
        assert (row["start_stock"], row["delivered"], row["served"], row["end_stock"]) == (10.0, 10.0, 10.0, 10.0)
        assert row["inventory"] == 5.0
    assert res.costs.inventory == 15.0


def test_lead_time_delivery():
    st_ = _states(4, lead_time=1.2, cost_holding=1.0)
    res = simulate([5.0, 0.0, 0.0, 0.0], np.zeros(4), st_)
    delivered = [r["delivered"] for r in res.ledger]
    assert delivered == [0.0, 0.0, 5.0, 0.0]  # ceil(1.2) = 2 periods
    res = simulate([5.0, 0.0, 0.0, 0.0], np.zeros(4), st_, lead_times=np.array([1, 0, 0, 0]))
    assert [r["delivered"] for r in res.ledger] == [0.0, 5.0, 0.0, 0.0]


def test_catalog_lead_time_follows_chosen_supplier():
    catalog = [Supplier("fast", 0.9, 0.0), Supplier("slow", 0.99, 3.0)]
    st_ = _states(5)

    def policy(t, stock, state):
        return DecisionVector(4.0 if t == 0 else 0.0, supplier=1)

    res = simulate(policy, np.zeros(5), st_, catalog=catalog)
    assert res.ledger[3]["delivered"] == 4.0


def test_shortage_and_transport_accounting():
    st_ = _states(2, cost_shortage=2.0, cost_transport_0=0.5, cost_transport_1=0.1, cost_transport_2=0.3,
                  cost_production=1.0)
    res = simulate([4.0, 0.0], [10.0, 0.0], st_, lead_times="zero")
    row = res.ledger[0]
    assert row["unmet"] == 6.0 and row["shortage"] == 12.0
    assert row["mode"] == 1 and row["transport"] == pytest.approx(0.4)
    assert row["production"] == 4.0
    assert res.metrics.stockout_rate == 50.0


def test_simulate_errors():
    with pytest.raises(DataError, match="misaligned"):
        simulate([1.0], [1.0, 2.0], _states(2))
    with pytest.raises(DataError, match="misaligned"):
        simulate([1.0, 1.0], [1.0, 2.0], _states(3))
    with pytest.raises(NumericError):
        simulate([-1.0], [1.0], _states(1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50), st.integers(0, 3)), min_size=1, max_size=30),
       st.floats(0, 40))
def test_conservation_and_complementarity(rows, init):
    orders, demand, leads = map(np.array, zip(*rows))
    st_ = _states(len(rows), cost_holding=1.0, cost_shortage=1.0)
    res = simulate(orders, demand, st_, initial_stock=init, lead_times=leads.astype(int))
    assert res.end_stock == pytest.approx(init + res.delivered - res.served, abs=1e-9)
    assert res.delivered + res.pending == pytest.approx(orders.sum(), abs=1e-9)
    m = res.metrics
    assert m.service_level + m.stockout_rate == pytest.approx(100.0)
    assert 0.0 <= m.service_level <= 100.0
    assert res.costs.total == pytest.approx(res.costs.production + res.costs.inventory
                                            + res.costs.transport + res.costs.shortage)


def _eoq_run(q, periods=100, d=10.0, order_cost=50.0, holding_horizon=10.0):
    st_ = _states(periods, cost_holding=holding_horizon / periods)
    res = simulate(lambda t, stock, state: eoq_decision(stock, q, d), np.full(periods, d), st_,
                   lead_times="zero", order_fixed_cost=order_cost, holding="average")
    return res


def test_eoq_cost_matches_closed_form():
    D, S, H = 1000.0, 50.0, 10.0
    q = eoq_quantity(EoqParams(D, S, H))
    assert q == pytest.approx(100.0)
    res = _eoq_run(q)
    closed = (D / q) * S + (q / 2.0) * H
    assert closed == pytest.approx(1000.0)
    assert res.metrics.total_cost == pytest.approx(closed, rel=1e-6)
    assert res.metrics.service_level == 100.0


def test_eoq_bracket():
    q = eoq_quantity(EoqParams(1000.0, 50.0, 10.0))
    best = _eoq_run(q).metrics.total_cost
    assert best <= _eoq_run(0.5 * q).metrics.total_cost
    assert best <= _eoq_run(2.0 * q).metrics.total_cost


def test_merge_ops():
    st_ = _states(2, cost_holding=1.0, cost_shortage=1.0)
    a = simulate([0.0, 0.0], [1.0, 0.0], st_)
    b = simulate([0.0, 0.0], [0.0, 0.0], st_)
    m = merge_ops([a, b])
    assert m.periods == 4 and m.fulfilled == 3 and m.service_level == 75.0
    assert m.total_cost == a.metrics.total_cost + b.metrics.total_cost


def test_confidence_interval_half_width():
    x = np.array([3.0, 5.0, 4.0, 6.0])
    r = confidence_interval(x)
    s = np.std(x, ddof=1)
    assert r.half_width == 1.96 * s / math.sqrt(4)
    assert (r.ci_low, r.ci_high) == (r.mean - r.half_width, r.mean + r.half_width)


def _t4_two_tailed(t):
    # closed-form Student-t CDF for 4 degrees of freedom
    x = abs(t) / math.sqrt(4.0 + t * t)
    return 2.0 * (1.0 - (0.5 + 0.75 * x - 0.25 * x ** 3))


def test_t4_oracle_against_table():
    assert _t4_two_tailed(2.776) == pytest.approx(0.05, abs=1e-4)
    assert _t4_two_tailed(4.604) == pytest.approx(0.01, abs=1e-5)


def test_paired_ttest_against_oracle():
    d = np.array([2.0, -1.0, 3.0, 0.0, 1.0])
    r = paired_ttest(d, np.zeros(5))
    expected_t = 1.0 / (math.sqrt(2.5) / math.sqrt(5))
    assert r.t == pytest.approx(expected_t, rel=1e-12)
    assert r.p == pytest.approx(_t4_two_tailed(expected_t), rel=1e-9)
    assert r.n == 5


def test_paired_ttest_edge_cases():
    with pytest.raises(DegenerateSample):
        paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateSample):
        paired_ttest([1.0], [0.0])
    r = paired_ttest([1.0, 1.0, 1.0, 1.0, 1.0 + 1e-12], np.zeros(5))
    assert abs(r.t) > 1e6 and r.p < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=20))
def test_ttest_sign_symmetry(xs):
    a = np.array(xs)
    b = np.zeros_like(a)
    if np.std(a, ddof=1) == 0.0:
        with pytest.raises(DegenerateSample):
            paired_ttest(a, b)
        return
    r1, r2 = paired_ttest(a, b), paired_ttest(b, a)
    assert r1.t == pytest.approx(-r2.t)
    assert r1.p == pytest.approx(r2.p)
    assert 0.0 <= r1.p <= 1.0
