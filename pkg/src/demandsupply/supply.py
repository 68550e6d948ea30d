"""Decision network, cost accounting and constraint penalties.

Quantities (stock, orders, demand) are in units, costs in currency.  The
network itself works on normalized inputs; :class:`SupplyContext` carries the
conversions between the two.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import DataError, NumericError, UsageError

N_MODES = 3

STATE_FIELDS = (
    "stock", "lead_time", "lead_max", "reliability", "reliability_min", "defect_rate",
    "cost_production", "cost_holding", "cost_transport_0", "cost_transport_1", "cost_transport_2",
    "cost_shortage",
)
STOCK, LEAD, LEAD_MAX, REL, REL_MIN, DEFECT, C_PROD, C_HOLD, C_T0, C_T1, C_T2, C_SHORT = range(12)


@dataclass
class SupplyState:
    stock: float = 0.0
    lead_time: float = 0.0
    lead_max: float = 1.0
    reliability: float = 1.0
    reliability_min: float = 0.0
    defect_rate: float = 0.0
    cost_production: float = 0.0
    cost_holding: float = 1.0
    cost_transport_0: float = 0.0
    cost_transport_1: float = 0.0
    cost_transport_2: float = 0.0
    cost_shortage: float = 1.0

    def __post_init__(self):
        arr = self.to_array()
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DataError(f"supply state must be finite and nonnegative: {arr}", "supply")
        for name in ("reliability", "reliability_min", "defect_rate"):
            if getattr(self, name) > 1:
                raise DataError(f"{name} must lie in [0, 1]", "supply")

    def to_array(self):
        return np.array([getattr(self, f) for f in STATE_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, arr):
        return cls(*(float(v) for v in np.asarray(arr, dtype=np.float64)))

    @property
    def transport_costs(self):
        return np.array([self.cost_transport_0, self.cost_transport_1, self.cost_transport_2])


@dataclass
class Supplier:
    name: str
    reliability: float
    lead_time: float


@dataclass
class DecisionVector:
    """Order quantity plus supplier and transport scores.

    ``supplier`` / ``mode`` hold explicit choices once :func:`repair` has run;
    otherwise the argmax of the scores is used (first index on ties).
    """

    q_order: float
    supplier_scores: np.ndarray = field(default_factory=lambda: np.zeros(1))
    mode_scores: np.ndarray = field(default_factory=lambda: np.zeros(N_MODES))
    supplier: int = None
    mode: int = None
    violation: bool = False

    def chosen_supplier(self):
        return int(np.argmax(self.supplier_scores)) if self.supplier is None else self.supplier

    def chosen_mode(self):
        return int(np.argmax(self.mode_scores)) if self.mode is None else self.mode


@dataclass
class CostBreakdown:
    production: float = 0.0
    inventory: float = 0.0
    transport: float = 0.0
    shortage: float = 0.0

    @property
    def total(self):
        return self.production + self.inventory + self.transport + self.shortage

    def __add__(self, other):
        return CostBreakdown(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


@dataclass
class CostParams:
    alpha: float = 1.0
    beta: float = 1.0
    rho_demand: float = 10.0
    rho_lead: float = 10.0
    rho_rel: float = 10.0
    tau: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise UsageError(f"cost parameter {f.name} must be nonnegative", "supply")
        if self.tau <= 0:
            raise UsageError("tau must be positive", "supply")


def total_cost(q_order, state, demand, mode=None):
    """Per-period cost of ordering ``q_order`` against realized ``demand``.

    Orders count as available in the same period; leftover units are charged
    holding and unmet units shortage.
    """
    if isinstance(state, SupplyState):
        state = state.to_array()
    if demand < 0:
        raise DataError("realized demand must be nonnegative", "supply")
    tc = state[C_T0:C_T2 + 1]
    mode = int(np.argmin(tc)) if mode is None else mode
    avail = state[STOCK] + q_order
    return CostBreakdown(
        production=state[C_PROD] * q_order,
        inventory=state[C_HOLD] * max(0.0, avail - demand),
        transport=tc[mode] * q_order,
        shortage=state[C_SHORT] * max(0.0, demand - avail),
    )


def constraint_penalty(q_order, state, y_hat, params, supplier=None):
    """Hinge penalties for demand cover, lead time and supplier reliability.

    ``q_order`` and ``y_hat`` may be tape tensors (gradients flow through the
    demand-cover term) or plain floats.  ``supplier`` overrides the state's
    lead time and reliability.
    """
    if isinstance(state, SupplyState):
        state = state.to_array()
    lead = state[LEAD] if supplier is None else supplier.lead_time
    rel = state[REL] if supplier is None else supplier.reliability
    fixed = (params.rho_lead * max(0.0, lead - state[LEAD_MAX])
             + params.rho_rel * max(0.0, state[REL_MIN] - rel))
    if isinstance(q_order, ad.Tensor) or isinstance(y_hat, ad.Tensor):
        gap = ad.sub(ad.add(y_hat, -state[STOCK]), q_order)
        return ad.add(ad.scale(ad.hinge(gap), params.rho_demand), fixed)
    return params.rho_demand * max(0.0, y_hat - state[STOCK] - q_order) + fixed


def service_level(fulfilled, total):
    if total < 1:
        raise DataError("service level needs at least one period", "supply")
    if not 0 <= fulfilled <= total:
        raise DataError(f"fulfilled count {fulfilled} outside [0, {total}]", "supply")
    return fulfilled / total


def supply_loss(cost, sl, alpha, beta, penalty=0.0):
    """alpha * normalized cost + beta * (1 - SL) + penalty; works on floats or tensors."""
    if isinstance(cost, ad.Tensor) or isinstance(sl, ad.Tensor) or isinstance(penalty, ad.Tensor):
        return ad.add(ad.add(ad.scale(cost, alpha), ad.scale(ad.add(ad.scale(sl, -1.0), 1.0), beta)), penalty)
    return alpha * cost + beta * (1.0 - sl) + penalty


def repair(o, state, y_hat, catalog=None, cover=True):
    """Make a decision feasible at inference time.

    Raises the order to cover ``y_hat - stock`` and restricts the supplier to
    those meeting the reliability floor and lead-time bound; without such a
    supplier the most reliable one is chosen and ``violation`` is set.
    """
    if isinstance(state, SupplyState):
        state = state.to_array()
    q = float(o.q_order)
    if cover:
        q = max(q, max(0.0, y_hat - state[STOCK]))
    catalog = catalog or [Supplier("default", state[REL], state[LEAD])]
    scores = np.asarray(o.supplier_scores, dtype=np.float64)
    if scores.size != len(catalog):
        scores = np.zeros(len(catalog))
    ok = [k for k, s in enumerate(catalog)
          if s.reliability >= state[REL_MIN] and s.lead_time <= state[LEAD_MAX]]
    if o.supplier is not None and o.supplier in ok:
        chosen, violation = o.supplier, False
    elif ok:
        chosen = max(ok, key=lambda k: (scores[k], -k))
        violation = False
    else:
        best = max(s.reliability for s in catalog)
        chosen = min(k for k, s in enumerate(catalog) if s.reliability == best)
        violation = True
    return DecisionVector(q, o.supplier_scores, o.mode_scores, chosen, o.chosen_mode(), violation)


def brute_force_order(support, pmf, state, grid):
    """Exhaustive minimum of expected cost over a discrete order grid.

    Returns ``(best order, minimum expected cost, expected cost per grid point)``.
    Ties go to the smaller order.
    """
    support = np.asarray(support, dtype=np.float64)
    pmf = np.asarray(pmf, dtype=np.float64)
    if abs(pmf.sum() - 1.0) > 1e-9:
        raise DataError("pmf must sum to 1", "supply")
    costs = np.array([sum(p * total_cost(q, state, y).total for y, p in zip(support, pmf)) for q in grid])
    k = int(np.argmin(costs))
    return float(grid[k]), float(costs[k]), costs


def expected_cost(q, support, pmf, state):
    return float(sum(p * total_cost(q, state, y).total for y, p in zip(support, pmf)))


# -- decision network -------------------------------------------------------

@dataclass
class DecisionConfig:
    n_state: int = 12
    hidden: tuple = (64, 32)
    dropout: float = 0.3
    n_suppliers: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def n_out(self):
        return 1 + self.n_suppliers + N_MODES


def init_decision(cfg, rng):
    params = {}
    n_in = 1 + cfg.n_state
    for k, h in enumerate(cfg.hidden):
        bound = 1.0 / np.sqrt(n_in)
        params[f"dec{k}.W"] = rng.uniform(-bound, bound, size=(n_in, h))
        params[f"dec{k}.b"] = np.zeros(h)
        n_in = h
    bound = 1.0 / np.sqrt(n_in)
    params["decout.W"] = rng.uniform(-bound, bound, size=(n_in, cfg.n_out))
    params["decout.b"] = np.zeros(cfg.n_out)
    return params


@dataclass
class DecisionOutput:
    """Tape tensors of one batch of decisions; ``q`` is in normalized demand units."""

    q: ad.Tensor
    supplier_scores: ad.Tensor
    mode_scores: ad.Tensor


def decision_forward(y_hat, states, params, cfg, train=False, rng=None):
    """Map (forecast, scaled state) to order quantity and choice scores.

    ``y_hat`` is a (batch, 1) tensor or array of normalized forecasts and
    ``states`` a (batch, n_state) array of scaled state features.  Dropout
    follows the first hidden layer in training mode.
    """
    tape = ad.active_tape()
    if tape is None:
        raise ad.NoActiveTape("decision_forward")
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    if not isinstance(y_hat, ad.Tensor):
        y_hat = tape.constant(np.asarray(y_hat, dtype=np.float64).reshape(-1, 1))
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(y_hat.value))):
        raise NumericError("non-finite decision network input", "supply")
    h = ad.concat([y_hat, tape.constant(states)], axis=1)
    for k in range(len(cfg.hidden)):
        h = ad.relu(ad.add(ad.matmul(h, tape.param(f"dec{k}.W", params[f"dec{k}.W"])),
                           tape.param(f"dec{k}.b", params[f"dec{k}.b"])))
        if train and k == 0 and cfg.dropout > 0:
            keep = 1.0 - cfg.dropout
            h = ad.mul(h, tape.constant((rng.random(h.shape) < keep) / keep))
    out = ad.add(ad.matmul(h, tape.param("decout.W", params["decout.W"])),
                 tape.param("decout.b", params["decout.b"]))
    q = ad.softplus(ad.slice_(out, (slice(None), slice(0, 1))))
    sup = ad.slice_(out, (slice(None), slice(1, 1 + cfg.n_suppliers)))
    modes = ad.slice_(out, (slice(None), slice(1 + cfg.n_suppliers, None)))
    return DecisionOutput(q, sup, modes)


@dataclass
class SupplyContext:
    """Unit conversions and catalog shared by training and evaluation.

    ``demand_min``/``demand_span`` invert the demand scaler; ``state_scaler``
    maps raw states to network inputs; ``cost_scale`` normalizes currency.
    """

    demand_min: float
    demand_span: float
    state_scaler: object
    cost_scale: float = 1.0
    catalog: list = None
    cover_repair: bool = True

    def scaled_states(self, states):
        return self.state_scaler.transform(states)

    def to_units(self, y_norm):
        return np.asarray(y_norm) * self.demand_span + self.demand_min


def supply_objective(y_hat, dec, states, demand, ctx, params):
    """Differentiable supply loss for a batch plus diagnostic values.

    ``y_hat`` (batch, 1) normalized forecasts feeding the decisions, ``dec``
    the decision network output, ``states`` raw (batch, 12) supply states and
    ``demand`` realized demand in units.  Transport and supplier choices enter
    through softmax weights of their scores.
    """
    tape = ad.active_tape()
    states = np.asarray(states, dtype=np.float64)
    b = len(states)
    span = ctx.demand_span if ctx.demand_span > 0 else 1.0
    y = tape.constant(np.asarray(demand, dtype=np.float64).reshape(b, 1))
    stock = tape.constant(states[:, STOCK:STOCK + 1])
    q = ad.scale(dec.q, span)
    avail = ad.add(stock, q)
    over = ad.hinge(ad.sub(avail, y))
    short = ad.hinge(ad.sub(y, avail))
    mode_w = ad.softmax(dec.mode_scores)
    unit_transport = ad.matmul(ad.mul(mode_w, tape.constant(states[:, C_T0:C_T2 + 1])), tape.constant(np.ones((N_MODES, 1))))
    per_unit = ad.add(unit_transport, tape.constant(states[:, C_PROD:C_PROD + 1]))
    cost = ad.add(ad.add(ad.mul(per_unit, q), ad.mul(tape.constant(states[:, C_HOLD:C_HOLD + 1]), over)),
                  ad.mul(tape.constant(states[:, C_SHORT:C_SHORT + 1]), short))
    cost_n = ad.scale(ad.mean(cost), 1.0 / ctx.cost_scale)
    sl = ad.mean(ad.sigmoid(ad.scale(ad.sub(avail, y), 1.0 / (params.tau * span))))

    y_units = ad.add(ad.scale(y_hat, span), ctx.demand_min)
    cover_gap = ad.hinge(ad.sub(ad.sub(y_units, stock), q))
    penalty = ad.scale(ad.mean(cover_gap), params.rho_demand / span)
    if ctx.catalog:
        lead = np.array([s.lead_time for s in ctx.catalog])[None, :]
        rel = np.array([s.reliability for s in ctx.catalog])[None, :]
    else:
        lead = states[:, LEAD:LEAD + 1]
        rel = states[:, REL:REL + 1]
    lead_viol = np.maximum(0.0, lead - states[:, LEAD_MAX:LEAD_MAX + 1]) / np.maximum(states[:, LEAD_MAX:LEAD_MAX + 1], 1.0)
    rel_viol = np.maximum(0.0, states[:, REL_MIN:REL_MIN + 1] - rel)
    viol = params.rho_lead * lead_viol + params.rho_rel * rel_viol
    if viol.shape[1] > 1:
        sup_w = ad.softmax(dec.supplier_scores)
        choice_pen = ad.mean(ad.matmul(ad.mul(sup_w, tape.constant(viol)), tape.constant(np.ones((viol.shape[1], 1)))))
    else:
        choice_pen = tape.constant(np.mean(viol))
    penalty = ad.add(penalty, choice_pen)
    loss = supply_loss(cost_n, sl, params.alpha, params.beta, penalty)
    return loss, {"cost": float(np.mean(cost.value)), "sl_smooth": float(sl.value), "penalty": float(penalty.value)}


def decide(y_hat_norm, states, params, cfg, ctx):
    """Eval-mode decisions for a batch, repaired and in units.

    Returns a list of :class:`DecisionVector`.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    y_hat_norm = np.asarray(y_hat_norm, dtype=np.float64).reshape(-1, 1)
    with Tape():
        out = decision_forward(y_hat_norm, ctx.scaled_states(states), params, cfg)
    q_units = out.q.value[:, 0] * (ctx.demand_span if ctx.demand_span > 0 else 1.0)
    y_units = ctx.to_units(y_hat_norm[:, 0])
    res = []
    for k in range(len(states)):
        o = DecisionVector(float(q_units[k]), out.supplier_scores.value[k], out.mode_scores.value[k])
        res.append(repair(o, states[k], float(y_units[k]), ctx.catalog, ctx.cover_repair))
    return res
