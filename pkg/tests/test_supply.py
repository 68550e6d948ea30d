import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demandsupply import autodiff as ad
from demandsupply.autodiff import Tape, grad_check
from demandsupply.errors import DataError, NumericError, UsageError
from demandsupply.preprocess import fit_scaler
from demandsupply.supply import (
    STOCK, CostParams, DecisionConfig, DecisionVector, Supplier, SupplyContext, SupplyState,
    brute_force_order, constraint_penalty, decide, decision_forward, expected_cost, init_decision,
    repair, service_level, supply_loss, supply_objective, total_cost,
)


def state(**kw):
    base = dict(stock=0.0, lead_time=1.0, lead_max=2.0, reliability=0.95, reliability_min=0.9,
                cost_production=1.0, cost_holding=0.5, cost_transport_0=0.2, cost_transport_1=0.3,
                cost_transport_2=0.4, cost_shortage=2.0)
    base.update(kw)
    return SupplyState(**base)


def test_state_validation():
    with pytest.raises(DataError):
        SupplyState(stock=-1.0)
    with pytest.raises(DataError):
        SupplyState(reliability=1.5)
    s = state(stock=3.0)
    assert SupplyState.from_array(s.to_array()) == s


def test_cost_examples():
    c = total_cost(0.0, state(stock=8.0), 8.0)
    assert (c.production, c.inventory, c.transport, c.shortage) == (0.0, 0.0, 0.0, 0.0)
    c = total_cost(0.0, SupplyState(cost_shortage=2.0), 10.0)
    assert c.shortage == 20.0 and c.total == 20.0
    c = total_cost(10.0, state(stock=5.0), 8.0, mode=0)
    assert (c.production, c.inventory, c.transport, c.shortage) == (10.0, 3.5, 2.0, 0.0)
    assert c.total == pytest.approx(15.5)


def test_cost_rejects_negative_demand():
    with pytest.raises(DataError):
        total_cost(1.0, state(), -1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e4), st.integers(0, 2))
def test_accounting_identity_and_complementarity(q, stock, y, mode):
    c = total_cost(q, state(stock=stock), y, mode=mode)
    assert c.total == c.production + c.inventory + c.transport + c.shortage
    assert min(c.production, c.inventory, c.transport, c.shortage) >= 0
    assert c.inventory * c.shortage == 0


def test_penalty_examples():
    p = CostParams(rho_demand=1.0)
    assert constraint_penalty(5.0, state(stock=5.0), 8.0, p) == 0.0
    assert constraint_penalty(3.0, state(stock=4.0), 10.0, p) == 3.0
    with Tape() as tape:
        q = tape.leaf(np.array([3.0]))
        pen = constraint_penalty(q, state(stock=4.0), 10.0, p)
        g = tape.backward(pen)[q.node]
    assert g[0] == -1.0


def test_penalty_lead_and_reliability():
    p = CostParams(rho_demand=0.0, rho_lead=2.0, rho_rel=10.0)
    assert constraint_penalty(0.0, state(lead_time=3.0), 0.0, p) == pytest.approx(2.0)
    assert constraint_penalty(0.0, state(), 0.0, p, supplier=Supplier("x", 0.8, 1.0)) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100), st.floats(0, 5), st.floats(0, 1))
def test_penalty_zero_on_feasible_region(q, stock, y_hat, lead, rel):
    s = state(stock=stock, lead_time=lead, reliability=rel)
    feasible = stock + q >= y_hat and lead <= s.lead_max and rel >= s.reliability_min
    pen = constraint_penalty(q, s, y_hat, CostParams())
    assert (pen == 0.0) == feasible


def test_service_level():
    assert service_level(95, 100) == 0.95
    assert service_level(0, 10) == 0.0
    assert service_level(7, 7) == 1.0
    with pytest.raises(DataError):
        service_level(0, 0)


def test_supply_loss_examples():
    assert supply_loss(0.7, 0.3, 1.0, 0.0) == 0.7
    assert supply_loss(0.7, 1.0, 0.0, 1.0) == 0.0
    assert supply_loss(0.4, 0.9, 0.5, 0.5) == pytest.approx(0.25)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 1), st.floats(0, 1), st.floats(0, 5), st.floats(0, 5))
def test_supply_loss_monotone(c1, c2, s1, s2, a, b):
    lo_c, hi_c = sorted((c1, c2))
    lo_s, hi_s = sorted((s1, s2))
    assert supply_loss(lo_c, 0.5, a, b) <= supply_loss(hi_c, 0.5, a, b)
    assert supply_loss(1.0, hi_s, a, b) <= supply_loss(1.0, lo_s, a, b)


def test_cost_params_validation():
    with pytest.raises(UsageError):
        CostParams(alpha=-1.0)
    with pytest.raises(UsageError):
        CostParams(tau=0.0)


def test_repair_examples():
    s = state(stock=4.0)
    ok = DecisionVector(8.0)
    fixed = repair(ok, s, 10.0)
    assert fixed.q_order == 8.0 and not fixed.violation
    assert repair(DecisionVector(2.0), s, 10.0).q_order == 6.0
    catalog = [Supplier("a", 0.7, 1.0), Supplier("b", 0.85, 1.0)]
    out = repair(DecisionVector(2.0, supplier_scores=np.array([5.0, 0.0])), s, 1.0, catalog)
    assert out.supplier == 1 and out.violation


def test_repair_restricts_to_feasible_suppliers():
    catalog = [Supplier("slow", 0.99, 5.0), Supplier("ok", 0.95, 1.0), Supplier("bad", 0.5, 0.0)]
    out = repair(DecisionVector(1.0, supplier_scores=np.array([9.0, 1.0, 8.0])), state(), 0.0, catalog)
    assert out.supplier == 1 and not out.violation


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 50),
       st.lists(st.tuples(st.floats(0, 1), st.floats(0, 4)), min_size=1, max_size=4), st.data())
def test_repair_idempotent(q, stock, y_hat, sups, data):
    catalog = [Supplier(f"s{k}", r, lt) for k, (r, lt) in enumerate(sups)]
    scores = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=len(catalog), max_size=len(catalog))))
    s = state(stock=stock)
    once = repair(DecisionVector(q, supplier_scores=scores), s, y_hat, catalog)
    twice = repair(once, s, y_hat, catalog)
    assert (twice.q_order, twice.supplier, twice.mode, twice.violation) == \
        (once.q_order, once.supplier, once.mode, once.violation)
    assert once.q_order >= max(0.0, y_hat - stock)


def _fractile_order(support, pmf, s):
    """Closed-form newsvendor oracle: smallest level whose cdf reaches the critical ratio."""
    c = s.cost_production + min(s.transport_costs)
    ratio = (s.cost_shortage - c) / (s.cost_shortage + s.cost_holding)
    cdf = np.cumsum(pmf)
    level = support[np.argmax(cdf >= ratio - 1e-12)]
    return max(0.0, level - s.stock)


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_matches_newsvendor_fractile(seed):
    rng = np.random.default_rng(seed)
    support = np.arange(0.0, 21.0)
    pmf = rng.dirichlet(np.ones(len(support)))
    s = state(stock=float(rng.integers(0, 6)), cost_production=0.3, cost_shortage=4.0, cost_holding=1.0)
    best, cost, costs = brute_force_order(support, pmf, s, np.arange(0.0, 26.0))
    assert best == _fractile_order(support, pmf, s)
    assert cost == pytest.approx(expected_cost(best, support, pmf, s))
    assert cost == costs.min()


def test_brute_force_rejects_bad_pmf():
    with pytest.raises(DataError):
        brute_force_order([1.0, 2.0], [0.5, 0.6], state(), np.arange(3.0))


def _ctx(n_state=12):
    states = np.random.default_rng(0).uniform(0, 1, (20, n_state))
    return SupplyContext(demand_min=10.0, demand_span=50.0, state_scaler=fit_scaler(states), cost_scale=30.0)


def test_decision_zero_weights():
    cfg = DecisionConfig(hidden=(4, 3), n_suppliers=2)
    params = {k: np.zeros_like(v) for k, v in init_decision(cfg, np.random.default_rng(0)).items()}
    with Tape():
        out = decision_forward(np.array([[0.3]]), np.ones((1, 12)), params, cfg)
    assert out.q.value[0, 0] == pytest.approx(math.log(2.0))
    np.testing.assert_array_equal(out.supplier_scores.value, 0.0)
    np.testing.assert_array_equal(out.mode_scores.value, 0.0)
    assert out.supplier_scores.shape == (1, 2) and out.mode_scores.shape == (1, 3)


def test_decision_eval_deterministic_and_rejects_nan():
    cfg = DecisionConfig(hidden=(4, 3))
    params = init_decision(cfg, np.random.default_rng(0))
    s = np.random.default_rng(1).uniform(size=(3, 12))
    with Tape():
        a = decision_forward(np.full((3, 1), 0.5), s, params, cfg).q.value
        b = decision_forward(np.full((3, 1), 0.5), s, params, cfg).q.value
        np.testing.assert_array_equal(a, b)
        s[0, 0] = np.nan
        with pytest.raises(NumericError):
            decision_forward(np.full((3, 1), 0.5), s, params, cfg)


def _raw_states(n, rng):
    arr = np.stack([state(stock=float(v)).to_array() for v in rng.uniform(0, 40, n)])
    arr[:, 1] = rng.uniform(0, 3, n)
    return arr


@pytest.mark.parametrize("catalog", [None, [Supplier("a", 0.95, 1.0), Supplier("b", 0.8, 3.0)]])
def test_supply_objective_gradients(catalog):
    rng = np.random.default_rng(4)
    ctx = _ctx()
    ctx.catalog = catalog
    cfg = DecisionConfig(hidden=(5, 4), n_suppliers=len(catalog) if catalog else 1)
    params = init_decision(cfg, rng)
    for k in params:
        if k.endswith(".b"):
            params[k] = params[k] + 0.3
    raw = _raw_states(4, rng)
    demand = rng.uniform(10, 60, 4)
    y0 = rng.uniform(0.1, 0.9, (4, 1))
    names = sorted(params)

    def fn(y_leaf, *leaves):
        tape = ad.active_tape()
        for n, leaf in zip(names, leaves):
            tape.bind(n, leaf)
        dec = decision_forward(y_leaf, ctx.scaled_states(raw), params, cfg)
        loss, _ = supply_objective(y_leaf, dec, raw, demand, ctx, CostParams())
        return loss

    assert grad_check(fn, [y0] + [params[n] for n in names]) < 1e-4


def test_supply_objective_values():
    ctx = SupplyContext(demand_min=0.0, demand_span=10.0, state_scaler=fit_scaler(np.zeros((2, 12))),
                        cost_scale=1.0)
    raw = np.stack([state(stock=5.0).to_array()])
    with Tape() as tape:
        q = tape.constant(np.array([[1.0]]))  # 10 units in normalized terms
        dec = type("D", (), {"q": q, "supplier_scores": tape.constant(np.zeros((1, 1))),
                             "mode_scores": tape.constant(np.array([[50.0, 0.0, 0.0]]))})()
        loss, info = supply_objective(tape.constant(np.array([[0.8]])), dec, raw, [8.0], ctx,
                                      CostParams(alpha=1.0, beta=0.0, rho_lead=0.0, rho_rel=0.0))
    # the softmax puts essentially all weight on mode 0, reproducing the hand example
    assert info["cost"] == pytest.approx(15.5, abs=1e-9)
    assert info["penalty"] == 0.0
    assert float(loss.value) == pytest.approx(15.5, abs=1e-9)


def test_decide_returns_repaired_decisions():
    ctx = _ctx()
    cfg = DecisionConfig(hidden=(4, 3))
    params = init_decision(cfg, np.random.default_rng(0))
    raw = _raw_states(6, np.random.default_rng(2))
    y = np.linspace(0.1, 0.9, 6)
    res = decide(y, raw, params, cfg, ctx)
    need = np.maximum(0.0, ctx.to_units(y) - raw[:, STOCK])
    assert all(d.q_order >= n - 1e-12 for d, n in zip(res, need))
