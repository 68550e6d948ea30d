"""Forecast metrics, the replenishment replay simulator and significance tests."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as _st

from .errors import DataError, NumericError
from .supply import C_HOLD, C_PROD, C_SHORT, C_T0, C_T2, LEAD, STOCK, CostBreakdown, DecisionVector

Z_CI = 1.96


@dataclass
class ForecastMetrics:
    mae: float
    rmse: float
    mape: float
    smape: float
    mape_skipped: int = 0

    def as_row(self):
        return {"MAE": self.mae, "RMSE": self.rmse, "MAPE (%)": self.mape, "sMAPE (%)": self.smape}


def forecast_metrics(actuals, predictions):
    """MAE, RMSE, MAPE and sMAPE in the units of the inputs.

    MAPE skips zero actuals (their count is reported); sMAPE terms with a
    zero denominator contribute 0.
    """
    y = np.asarray(actuals, dtype=np.float64).reshape(-1)
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise DataError("no observations to score", "evaluate")
    if y.shape != p.shape:
        raise DataError(f"{y.size} actuals vs {p.size} predictions", "evaluate")
    e = np.abs(y - p)
    nz = y != 0
    mape = float(100.0 * np.mean(e[nz] / np.abs(y[nz]))) if nz.any() else float("nan")
    denom = np.abs(y) + np.abs(p)
    ratio = np.divide(2.0 * e, denom, out=np.zeros_like(e), where=denom > 0)
    return ForecastMetrics(
        mae=float(np.mean(e)),
        rmse=float(np.sqrt(np.mean(e * e))),
        mape=mape,
        smape=float(100.0 * np.mean(ratio)),
        mape_skipped=int((~nz).sum()),
    )


@dataclass
class OpsMetrics:
    inventory_cost: float
    stockout_rate: float
    service_level: float
    total_cost: float
    periods: int = 0
    fulfilled: int = 0
    violations: int = 0

    def as_row(self):
        return {"Inventory Cost": self.inventory_cost, "Stockout Rate (%)": self.stockout_rate,
                "Service Level (%)": self.service_level, "Total Cost": self.total_cost}


@dataclass
class SimResult:
    metrics: OpsMetrics
    costs: CostBreakdown
    ledger: list = field(default_factory=list)
    end_stock: float = 0.0
    delivered: float = 0.0
    served: float = 0.0
    orders_placed: int = 0
    pending: float = 0.0


LEDGER_COLUMNS = ("period", "start_stock", "delivered", "order", "supplier", "mode", "lead", "demand",
                  "served", "unmet", "end_stock", "production", "inventory", "transport", "shortage",
                  "fulfilled")


def _as_decision(d, state):
    if isinstance(d, DecisionVector):
        return d
    return DecisionVector(float(d), mode=int(np.argmin(state[C_T0:C_T2 + 1])))


def simulate(policy, demand, states, initial_stock=0.0, lead_times="state", catalog=None,
             order_fixed_cost=0.0, holding="end"):
    """Replay ``policy`` against a demand trace with lost sales.

    Each period: receive orders that are due, ask the policy for an order
    given current stock, receive it immediately if its lead time is 0,
    serve ``min(stock, demand)`` and book costs.  ``policy`` is either a
    sequence of orders or a callable ``policy(t, stock, state)`` returning a
    quantity or :class:`DecisionVector`.  ``lead_times`` is ``"state"``
    (ceil of each state's lead time, or of the chosen catalog supplier's),
    ``"zero"`` or an explicit integer array.  ``holding="average"`` charges
    holding on the mean of post-delivery and end stock instead of end stock.
    """
    demand = np.asarray(demand, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    n = len(demand)
    if states.ndim != 2 or len(states) != n:
        raise DataError(f"misaligned traces: {n} demand periods vs states {states.shape}", "evaluate")
    if not callable(policy):
        orders = np.asarray(policy, dtype=np.float64)
        if len(orders) != n:
            raise DataError(f"misaligned traces: {n} demand periods vs {len(orders)} orders", "evaluate")
        policy = lambda t, stock, state: orders[t]  # noqa: E731
    if isinstance(lead_times, str):
        if lead_times not in ("state", "zero"):
            raise DataError(f"unknown lead time mode '{lead_times}'", "evaluate")
        fixed_leads = None if lead_times == "state" else np.zeros(n, dtype=np.int64)
    else:
        fixed_leads = np.asarray(lead_times, dtype=np.int64)
        if len(fixed_leads) != n:
            raise DataError("misaligned lead time trace", "evaluate")
    pipeline = {}
    stock = float(initial_stock)
    costs = CostBreakdown()
    ledger = []
    fulfilled = violations = orders_placed = 0
    delivered_total = served_total = 0.0
    for t in range(n):
        start = stock
        arrived = pipeline.pop(t, 0.0)
        stock += arrived
        state = states[t].copy()
        state[STOCK] = stock
        d = _as_decision(policy(t, stock, state), state)
        q = float(d.q_order)
        if not math.isfinite(q) or q < 0:
            raise NumericError(f"policy returned invalid order {q} at period {t}", "evaluate")
        sup = d.chosen_supplier()
        mode = d.chosen_mode()
        violations += int(d.violation)
        if fixed_leads is not None:
            lead = int(fixed_leads[t])
        elif catalog:
            lead = int(math.ceil(catalog[sup].lead_time))
        else:
            lead = int(math.ceil(state[LEAD]))
        if q > 0:
            orders_placed += 1
            if lead == 0:
                stock += q
                arrived += q
            else:
                pipeline[t + lead] = pipeline.get(t + lead, 0.0) + q
        after_delivery = stock
        served = min(stock, demand[t])
        unmet = demand[t] - served
        stock -= served
        basis = stock if holding == "end" else 0.5 * (after_delivery + stock)
        period = CostBreakdown(
            production=state[C_PROD] * q + (order_fixed_cost if q > 0 else 0.0),
            inventory=state[C_HOLD] * basis,
            transport=states[t, C_T0 + mode] * q,
            shortage=state[C_SHORT] * unmet,
        )
        costs = costs + period
        ok = unmet <= 0
        fulfilled += int(ok)
        delivered_total += arrived
        served_total += served
        ledger.append(dict(period=t, start_stock=start, delivered=arrived, order=q, supplier=sup, mode=mode,
                           lead=lead, demand=demand[t], served=served, unmet=unmet, end_stock=stock,
                           production=period.production, inventory=period.inventory,
                           transport=period.transport, shortage=period.shortage, fulfilled=int(ok)))
    sl = 100.0 * fulfilled / n if n else 100.0
    metrics = OpsMetrics(costs.inventory, 100.0 - sl, sl, costs.total, n, fulfilled, violations)
    return SimResult(metrics, costs, ledger, stock, delivered_total, served_total, orders_placed,
                     float(sum(pipeline.values())))


def merge_ops(results):
    """Aggregate several simulations (e.g. one per product) into one metric set."""
    costs = CostBreakdown()
    n = fulfilled = violations = 0
    for r in results:
        costs = costs + r.costs
        n += r.metrics.periods
        fulfilled += r.metrics.fulfilled
        violations += r.metrics.violations
    sl = 100.0 * fulfilled / n if n else 100.0
    return OpsMetrics(costs.inventory, 100.0 - sl, sl, costs.total, n, fulfilled, violations)


class DegenerateSample(DataError):
    pass


@dataclass
class StatResult:
    mean: float
    std: float
    n: int
    ci_low: float
    ci_high: float
    t: float = float("nan")
    p: float = float("nan")

    @property
    def half_width(self):
        return Z_CI * self.std / math.sqrt(self.n)

    def to_dict(self):
        return asdict(self)


def confidence_interval(x):
    """Mean +- 1.96 s / sqrt(n) with the sample standard deviation s."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 1:
        raise DegenerateSample("no values", "evaluate")
    m = float(np.mean(x))
    s = float(np.std(x, ddof=1)) if n > 1 else 0.0
    h = Z_CI * s / math.sqrt(n)
    return StatResult(m, s, n, m - h, m + h)


def paired_ttest(a, b):
    """Two-tailed paired t-test on ``a - b`` with n - 1 degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DegenerateSample("paired samples must be 1-d and equally long", "evaluate")
    n = len(a)
    d = a - b
    if n < 2 or np.all(d == d[0]):
        raise DegenerateSample("differences have zero variance; t is undefined", "evaluate")
    res = confidence_interval(d)
    if res.std == 0.0:
        # distinct values whose spread underflows, e.g. subnormal differences
        raise DegenerateSample("differences have zero variance; t is undefined", "evaluate")
    res.t = res.mean / (res.std / math.sqrt(n))
    res.p = float(2.0 * _st.t.sf(abs(res.t), n - 1))
    return res
