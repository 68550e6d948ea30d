"""Demand panels: synthetic generation and CSV ingestion.

A panel holds one demand series per product on a shared daily grid, the
categorical context labels observed alongside it and a raw supply state per
product and period.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .preprocess import CATEGORICAL, CONTINUOUS, DATE, RawTable
from .supply import C_HOLD, C_PROD, C_SHORT, C_T0, LEAD, LEAD_MAX, REL, REL_MIN, DEFECT, STATE_FIELDS, STOCK


@dataclass
class Panel:
    """``demand`` (P, T) in units, ``contexts`` name -> (P, T) labels, ``states`` (P, T, 12)."""

    demand: np.ndarray
    states: np.ndarray
    contexts: dict = field(default_factory=dict)
    products: list = None
    dates: np.ndarray = None

    def __post_init__(self):
        self.demand = np.asarray(self.demand, dtype=np.float64)
        if self.demand.ndim == 1:
            self.demand = self.demand[None, :]
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 2:
            self.states = self.states[None]
        p, t = self.demand.shape
        if self.states.shape != (p, t, len(STATE_FIELDS)):
            raise DataError(f"states shape {self.states.shape} does not match demand {self.demand.shape}", "data")
        for name, labels in self.contexts.items():
            if np.shape(labels) != (p, t):
                raise DataError(f"context '{name}' has shape {np.shape(labels)}, expected {(p, t)}", "data")
        if self.products is None:
            self.products = [f"p{k}" for k in range(p)]

    @property
    def n_products(self):
        return self.demand.shape[0]

    @property
    def horizon(self):
        return self.demand.shape[1]


@dataclass
class SyntheticSpec:
    """Seasonal demand with trend, noise, shocks and category effects.

    ``category_shift`` spaces category levels evenly around ``level``;
    ``category_lag`` delays each category's season by that many periods
    per category index.  Stock is drawn as a fraction of ``level``.
    """

    horizon: int = 720
    level: float = 100.0
    slope: float = 0.0
    amplitude: float = 30.0
    period: int = 12
    noise_std: float = 5.0
    shock_prob: float = 0.0
    shock_magnitude: float = 0.0
    seed: int = 0
    n_products: int = 1
    n_categories: int = 1
    category_shift: float = 0.0
    category_lag: int = 0
    season_context: bool = True
    stock_range: tuple = (0.0, 1.0)
    lead_range: tuple = (0.0, 3.0)
    lead_max: float = 5.0
    reliability_range: tuple = (0.85, 1.0)
    reliability_min: float = 0.8
    defect_range: tuple = (0.0, 0.05)
    cost_production: float = 0.1
    cost_holding: float = 1.0
    cost_transport: tuple = (0.05, 0.1, 0.2)
    cost_shortage: float = 5.0

    def __post_init__(self):
        for name in ("stock_range", "lead_range", "reliability_range", "defect_range", "cost_transport"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.horizon < 3 or self.period < 1:
            raise UsageError("synthetic horizon must be at least 3 and period at least 1", "data")
        if not 0 <= self.shock_prob <= 1:
            raise UsageError("shock probability must lie in [0, 1]", "data")
        if self.n_products < 1 or self.n_categories < 1:
            raise UsageError("need at least one product and one category", "data")
        if len(self.cost_transport) != 3:
            raise UsageError("cost_transport needs one cost per transport mode (3)", "data")


def generate_synthetic(spec):
    """Draw a panel from ``spec``; identical seeds give identical panels."""
    rng = np.random.default_rng(spec.seed)
    p, t = spec.n_products, spec.horizon
    steps = np.arange(t)
    cats = np.arange(p) % spec.n_categories
    offsets = (cats - (spec.n_categories - 1) / 2.0) * spec.category_shift
    lags = cats * spec.category_lag
    season = spec.amplitude * np.sin(2 * np.pi * (steps[None, :] - lags[:, None]) / spec.period)
    noise = rng.normal(0.0, spec.noise_std, size=(p, t)) if spec.noise_std > 0 else np.zeros((p, t))
    hits = rng.random((p, t)) < spec.shock_prob
    signs = np.where(rng.random((p, t)) < 0.5, -1.0, 1.0)
    shocks = np.where(hits, signs * spec.shock_magnitude, 0.0)
    demand = np.maximum(0.0, spec.level + offsets[:, None] + spec.slope * steps[None, :] + season + noise + shocks)

    states = np.zeros((p, t, len(STATE_FIELDS)))
    states[..., STOCK] = rng.uniform(*spec.stock_range, size=(p, t)) * spec.level
    states[..., LEAD] = rng.uniform(*spec.lead_range, size=(p, t))
    states[..., LEAD_MAX] = spec.lead_max
    states[..., REL] = rng.uniform(*spec.reliability_range, size=(p, t))
    states[..., REL_MIN] = spec.reliability_min
    states[..., DEFECT] = rng.uniform(*spec.defect_range, size=(p, t))
    states[..., C_PROD] = spec.cost_production
    states[..., C_HOLD] = spec.cost_holding
    states[..., C_T0:C_T0 + 3] = spec.cost_transport
    states[..., C_SHORT] = spec.cost_shortage

    contexts = {}
    if spec.n_categories > 1:
        contexts["category"] = np.array([[f"c{c}"] * t for c in cats], dtype=object)
    if spec.season_context:
        contexts["season"] = np.array([[f"s{k % spec.period}" for k in steps]] * p, dtype=object)
    dates = np.datetime64("2020-01-01") + steps.astype("timedelta64[D]")
    return Panel(demand, states, contexts, [f"p{k}" for k in range(p)], dates), {"shocks": int(hits.sum())}


def write_panel_csv(path, panel):
    """Long-format CSV: one row per (date, product) with demand, contexts and states."""
    names = list(panel.contexts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "product", "quantity", *names, *STATE_FIELDS])
        for k in range(panel.horizon):
            for j, prod in enumerate(panel.products):
                w.writerow([str(panel.dates[k]), prod, repr(float(panel.demand[j, k])),
                            *(panel.contexts[n][j, k] for n in names),
                            *(repr(float(v)) for v in panel.states[j, k])])


# -- CSV ingestion ----------------------------------------------------------

@dataclass
class Schema:
    """Maps roles to CSV headers.

    ``date`` and ``quantity`` are required; ``product`` is optional (single
    series when absent); ``categorical`` lists context columns; ``states``
    maps supply-state field names to headers.
    """

    date: str = "date"
    quantity: str = "quantity"
    product: str = None
    categorical: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    date_format: str = None

    def __post_init__(self):
        unknown = set(self.states) - set(STATE_FIELDS)
        if unknown:
            raise UsageError(f"unknown supply state fields in schema: {sorted(unknown)}", "data")


def _parse_date(text, fmt):
    from datetime import datetime

    if fmt:
        return np.datetime64(datetime.strptime(text, fmt).date())
    return np.datetime64(text, "D")


def ingest_csv(path, schema):
    """Read ``path`` into a typed table sorted by date.

    Rows sharing a timestamp (and product) are aggregated: quantities summed,
    other continuous columns averaged, labels taken from the first row.
    """
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}", "data")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or not any(c.strip() for c in rows[0]):
        raise DataError(f"{path} is empty", "data")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path} has a header but no rows", "data")
    roles = {"date": schema.date, "quantity": schema.quantity}
    if schema.product:
        roles["product"] = schema.product
    for c in schema.categorical:
        roles[f"categorical:{c}"] = c
    for f_, c in schema.states.items():
        roles[f"state:{f_}"] = c
    for role, col in roles.items():
        if col not in header:
            raise DataError(f"missing column for role '{role}': '{col}' not in {header}", "data")
    pos = {h: i for i, h in enumerate(header)}
    continuous = [schema.quantity, *schema.states.values()]
    labels = ([schema.product] if schema.product else []) + list(schema.categorical)

    parsed = []
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise DataError(f"row {i} has {len(r)} cells, expected {len(header)}", "data")
        try:
            d = _parse_date(r[pos[schema.date]].strip(), schema.date_format)
        except ValueError:
            raise DataError(f"unparseable cell at row {i}, column '{schema.date}': {r[pos[schema.date]]!r}",
                            "data") from None
        vals = {}
        for c in continuous:
            cell = r[pos[c]].strip()
            if cell == "":
                vals[c] = math.nan
                continue
            try:
                vals[c] = float(cell)
            except ValueError:
                raise DataError(f"unparseable cell at row {i}, column '{c}': {cell!r}", "data") from None
        for c in labels:
            cell = r[pos[c]].strip()
            vals[c] = cell if cell else None
        parsed.append((d, vals))

    groups = {}
    for d, vals in parsed:
        key = (d, vals.get(schema.product) if schema.product else None)
        groups.setdefault(key, []).append(vals)
    keys = sorted(groups, key=lambda k: (k[0], "" if k[1] is None else str(k[1])))
    cols = {schema.date: np.array([k[0] for k in keys], dtype="datetime64[D]")}
    kinds = {schema.date: DATE}
    for c in continuous:
        agg = []
        for k in keys:
            v = np.array([g[c] for g in groups[k]])
            present = v[~np.isnan(v)]
            if not len(present):
                agg.append(math.nan)
            else:
                agg.append(present.sum() if c == schema.quantity else present.mean())
        cols[c] = np.array(agg, dtype=np.float64)
        kinds[c] = CONTINUOUS
    for c in labels:
        cols[c] = np.array([next((g[c] for g in groups[k] if g[c] is not None), None) for k in keys],
                           dtype=object)
        kinds[c] = CATEGORICAL
    return RawTable(cols, kinds)


def panel_from_table(table, schema, state_defaults=None):
    """Pivot an ingested table into a panel on the union of dates.

    Missing (product, date) cells become NaN demand and NaN states, which the
    pipeline imputes from training statistics.  State fields absent from the
    schema take ``state_defaults`` (or the :class:`SupplyState` defaults).
    """
    from .supply import SupplyState

    defaults = SupplyState().to_array()
    for name, v in (state_defaults or {}).items():
        if name not in STATE_FIELDS:
            raise UsageError(f"unknown supply state field '{name}'", "data")
        defaults[STATE_FIELDS.index(name)] = float(v)
    dates = np.unique(table.columns[schema.date])
    if schema.product:
        prods = list(dict.fromkeys(table.columns[schema.product]))
        if None in prods:
            raise DataError(f"product column '{schema.product}' has missing cells", "data")
        prod_of = {p: k for k, p in enumerate(prods)}
        rows_p = np.array([prod_of[v] for v in table.columns[schema.product]])
    else:
        prods = ["series"]
        rows_p = np.zeros(table.n_rows, dtype=np.int64)
    rows_t = np.searchsorted(dates, table.columns[schema.date])
    p, t = len(prods), len(dates)
    demand = np.full((p, t), np.nan)
    demand[rows_p, rows_t] = table.columns[schema.quantity]
    states = np.full((p, t, len(STATE_FIELDS)), np.nan)
    for j, name in enumerate(STATE_FIELDS):
        if name in schema.states:
            states[rows_p, rows_t, j] = table.columns[schema.states[name]]
        else:
            states[..., j] = defaults[j]
    contexts = {}
    for c in schema.categorical:
        lab = np.full((p, t), None, dtype=object)
        lab[rows_p, rows_t] = table.columns[c]
        contexts[c] = lab
    return Panel(demand, states, contexts, [str(x) for x in prods], dates)
