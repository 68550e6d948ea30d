"""End-to-end pipeline: panel -> datasets -> trained models -> test metrics.

Also hosts the multi-seed comparison, the ablation grid and the sensitivity
sweep, all of which are built from :func:`run_seed`-style single runs that
only share read-only inputs and can therefore run in worker processes.
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines as bl
from .config import TOGGLES
from .errors import DataError, NumericError, UsageError
from .evaluate import confidence_interval, forecast_metrics, merge_ops, paired_ttest, simulate
from .forecaster import ForecasterConfig, init_forecaster, predict
from .preprocess import (CATEGORICAL, CONTINUOUS, AugmentConfig, RawTable, WindowedDataset, augment_gaussian,
                         chrono_split, drop_supplier_records, fit_impute, fit_scaler, fit_vocab, impute,
                         make_windows, split_bounds)
from .supply import (C_HOLD, C_PROD, C_SHORT, C_T0, C_T2, DEFECT, LEAD, LEAD_MAX, REL, REL_MIN, STATE_FIELDS, STOCK, DecisionConfig, DecisionVector, Supplier,
                     SupplyContext, decide, init_decision, repair, total_cost)
from .trainer import Problem, pretrain_forecaster, train, train_joint

log = logging.getLogger(__name__)

SUPPLIER_FIELDS = ("lead_time", "reliability", "defect_rate")
ABLATION_LABELS = {
    "full": "Full Hybrid",
    "no-embeddings": "Without Embeddings",
    "no-augmentation": "Without Augmentation",
    "forecast-only": "Demand Forecasting Only",
    "supply-only": "Supply Optimization Only",
}
ABLATION_COLUMNS = ("Configuration", "MAE", "RMSE", "MAPE (%)", "Inventory Cost", "Stockout Rate (%)",
                    "Service Level (%)")
SWEEP_AXES = ("lr", "batch_size", "embed_dim", "lambda1", "lambda2", "window")


@dataclass
class Prepared:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    split: object
    demand: np.ndarray
    states: np.ndarray
    demand_scaler: object
    vocabs: dict
    ctx: SupplyContext
    fcfg: ForecasterConfig
    dcfg: DecisionConfig
    info: dict = field(default_factory=dict)


def catalog_of(cfg):
    return [Supplier(s.name, s.reliability, s.lead_time) for s in cfg.cost.catalog] or None


def prepare(panel, cfg, seed=0, embeddings=True, augment=None):
    """Impute, scale, encode, window and split a panel using training statistics only.

    ``augment`` overrides ``cfg.preprocess.augment``; augmentation (Gaussian
    window noise and supplier-record dropout) only touches the training split.
    """
    pc = cfg.preprocess
    augment = pc.augment if augment is None else augment
    n_prod, horizon = panel.demand.shape
    window = pc.window
    if horizon < window + 2:
        raise DataError(f"horizon {horizon} is too short for window {window}", "experiment")
    bounds = split_bounds(horizon, pc.fractions)
    if bounds.t_train < 1:
        raise DataError("training split is empty", "experiment")

    times = np.tile(np.arange(horizon), n_prod)
    train_rows = np.flatnonzero(times < bounds.t_train)
    flat_states = panel.states.reshape(n_prod * horizon, len(STATE_FIELDS))
    cols = {"quantity": panel.demand.reshape(-1).copy()}
    kinds = {"quantity": CONTINUOUS}
    for j, name in enumerate(STATE_FIELDS):
        cols[name] = flat_states[:, j].copy()
        kinds[name] = CONTINUOUS
    for name, labels in panel.contexts.items():
        cols[f"ctx:{name}"] = np.asarray(labels, dtype=object).reshape(-1).copy()
        kinds[f"ctx:{name}"] = CATEGORICAL
    table = RawTable(cols, kinds)
    stats = fit_impute(table, train_rows)
    table = impute(table, stats)
    dropped = 0
    if augment and pc.supplier_dropout > 0:
        part, mask = drop_supplier_records(table.take(train_rows), pc.supplier_dropout, seed, stats,
                                           columns=list(SUPPLIER_FIELDS))
        for name in SUPPLIER_FIELDS:
            table.columns[name][train_rows] = part.columns[name]
        dropped = int(mask.sum())

    demand = table.columns["quantity"].reshape(n_prod, horizon)
    states = np.stack([table.columns[n] for n in STATE_FIELDS], axis=1).reshape(n_prod, horizon, -1)
    if np.any(demand < 0):
        raise DataError("demand must be nonnegative", "experiment")
    scaler = fit_scaler(demand[:, :bounds.t_train].reshape(-1))
    state_scaler = fit_scaler(states[:, :bounds.t_train].reshape(-1, len(STATE_FIELDS)))
    vocabs = {}
    ctx_idx = np.zeros((n_prod, horizon, len(panel.contexts)), dtype=np.int64)
    for j, name in enumerate(panel.contexts):
        labels = table.columns[f"ctx:{name}"]
        vocabs[name] = fit_vocab(labels[train_rows])
        ctx_idx[..., j] = vocabs[name].transform(labels).reshape(n_prod, horizon)

    y_norm = scaler.transform(demand)
    parts = []
    spec = None
    for p in range(n_prod):
        ds = make_windows(y_norm[p], window, ctx_idx[p], states[p], series_id=p)
        spec_p, ds = chrono_split(ds, horizon, pc.fractions)
        spec = spec_p if spec is None else replace(spec, dropped=spec.dropped + spec_p.dropped,
                                                     counts={k: spec.counts[k] + spec_p.counts[k]
                                                             for k in spec.counts})
        parts.append(ds)
    data = WindowedDataset.concat(parts)
    tr, va, te = data.part("train"), data.part("val"), data.part("test")
    for name, ds in (("training", tr), ("validation", va), ("test", te)):
        if len(ds) == 0:
            raise DataError(f"{name} split has no complete windows (window {window}, horizon {horizon})",
                            "experiment")

    span = float(scaler.span) if scaler.span > 0 else 1.0
    naive_units = tr.x[:, -1] * span + float(scaler.mins)
    y_units = tr.y * span + float(scaler.mins)
    naive_cost = np.mean([total_cost(max(0.0, yh - s[STOCK]), s, y).total
                          for yh, s, y in zip(naive_units, tr.states, y_units)])
    cost_scale = float(naive_cost) if naive_cost > 0 else 1.0
    catalog = catalog_of(cfg)
    ctx = SupplyContext(float(scaler.mins), float(scaler.span), state_scaler, cost_scale, catalog)

    if augment and pc.noise_sigma > 0:
        tr = augment_gaussian(tr, AugmentConfig(pc.noise_sigma, pc.supplier_dropout, seed))
    m = cfg.model
    fcfg = ForecasterConfig(window=window,
                            vocab_sizes=tuple(v.size for v in vocabs.values()) if embeddings else (),
                            embed_dim=m.embed_dim, hidden=m.hidden, dense=m.dense,
                            recurrent_dropout=m.recurrent_dropout, dropout=m.dropout, cell=m.cell,
                            stochastic=m.stochastic_head)
    dcfg = DecisionConfig(len(STATE_FIELDS), m.decision_hidden, m.decision_dropout,
                          n_suppliers=len(catalog) if catalog else 1)
    info = {"split": {"t_train": bounds.t_train, "t_val": bounds.t_val, "horizon": horizon,
                      "dropped_windows": spec.dropped, **spec.counts},
            "supplier_records_dropped": dropped, "train_samples": len(tr), "cost_scale": cost_scale,
            "vocab": {k: v.to_dict() for k, v in vocabs.items()}}
    return Prepared(tr, va, te, bounds, demand, states, scaler, vocabs, ctx, fcfg, dcfg, info)


# -- training ------------------------------------------------------------------

@dataclass
class Fitted:
    variant: str
    theta: dict
    phi: dict
    fcfg: ForecasterConfig
    histories: dict
    frozen: bool = False
    decision_policy: bool = True


def naive_frozen(x):
    return np.asarray(x)[:, -1]


def init_params(prep, seed, fcfg=None):
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])
    theta = init_forecaster(fcfg or prep.fcfg, rng)
    phi = init_decision(prep.dcfg, rng)
    return theta, phi


def fit_variant(prep, cfg, seed, variant="full", cell=None, phases=None):
    """Train one configuration.

    ``forecast-only`` trains with lambda2 = 0 and a detached forecast and is
    evaluated with the repair rule; ``supply-only`` trains the decision
    network on a frozen naive forecast.
    """
    if variant not in ABLATION_LABELS:
        raise UsageError(f"unknown variant '{variant}'", "experiment")
    fcfg = replace(prep.fcfg, cell=cell) if cell else prep.fcfg
    tcfg = replace(cfg.train, seed=seed)
    if phases:
        tcfg = replace(tcfg, phases=phases)
    theta, phi = init_params(prep, seed, fcfg)
    cost = cfg.cost.params()
    problem = Problem(fcfg, prep.train, prep.val, prep.dcfg, prep.ctx, cost)
    if variant == "supply-only":
        problem.frozen_forecast = naive_frozen
        _, phi, hist = train_joint(problem, theta, phi, tcfg)
        return Fitted(variant, None, phi, fcfg, {"joint": hist}, frozen=True)
    if variant == "forecast-only":
        tcfg = replace(tcfg, lambda2=0.0, detach=True)
    theta, phi, hists = train(problem, theta, phi, tcfg)
    decision = tcfg.lambda2 > 0 and tcfg.phases != "pretrain"
    return Fitted(variant, theta, phi, fcfg, hists, decision_policy=decision)


def forecasts(prep, fitted, ds):
    """Normalized point forecasts of ``fitted`` on ``ds``."""
    if fitted.frozen:
        return naive_frozen(ds.x)
    return predict(fitted.theta, fitted.fcfg, ds.x, ds.contexts)


# -- policies and simulation ----------------------------------------------------

def _cheapest_mode(state):
    return int(np.argmin(state[C_T0:C_T2 + 1]))


def repair_rule_policy(ctx):
    def act(yh_units, yh_norm, state):
        o = DecisionVector(0.0, mode=_cheapest_mode(state))
        return repair(o, state, yh_units, ctx.catalog, cover=True)
    return act


def decision_policy(fitted, prep):
    def act(yh_units, yh_norm, state):
        return decide([yh_norm], state[None, :], fitted.phi, prep.dcfg, prep.ctx)[0]
    return act


def eoq_setup(prep, cfg):
    t_train = prep.split.t_train
    mean_d = float(np.mean(prep.demand[:, :t_train]))
    hold = float(np.mean(prep.states[:, :t_train, C_HOLD]))
    q_star = bl.eoq_quantity(bl.EoqParams(max(mean_d, 1e-9), cfg.evaluation.eoq_order_cost, max(hold, 1e-9)))
    return q_star, mean_d


def eoq_policy(prep, cfg):
    q_star, mean_d = eoq_setup(prep, cfg)

    def act(yh_units, yh_norm, state):
        return DecisionVector(bl.eoq_decision(state[STOCK], q_star, mean_d), mode=_cheapest_mode(state))
    return act


def reorder_policy(prep, cfg):
    t_train = prep.split.t_train
    d = prep.demand[:, :t_train]
    if cfg.evaluation.lead_times == "state":
        lead = max(1.0, float(np.mean(np.ceil(prep.states[:, :t_train, LEAD]))))
    else:
        lead = 1.0
    q_star, _ = eoq_setup(prep, cfg)
    rop = bl.reorder_point(float(d.mean()), float(d.std()), lead, cfg.evaluation.reorder_z)
    pol = bl.ReorderPolicy(rop, q_star, cfg.evaluation.reorder_z)

    def act(yh_units, yh_norm, state):
        return DecisionVector(bl.reorder_decision(state[STOCK], pol), mode=_cheapest_mode(state))
    return act


def simulate_policy(prep, cfg, act, yh_norm, ledgers=None):
    """Replay ``act`` on every product's test periods; returns merged metrics and per-product results."""
    ds = prep.test
    results = []
    for p in np.unique(ds.series):
        idx = np.flatnonzero(ds.series == p)
        idx = idx[np.argsort(ds.t[idx])]
        demand = prep.ctx.to_units(ds.y[idx])
        states = ds.states[idx]
        yn = np.asarray(yh_norm)[idx]
        yu = prep.ctx.to_units(yn)

        def policy(k, stock, state, yu=yu, yn=yn):
            return act(float(yu[k]), float(yn[k]), state)

        res = simulate(policy, demand, states, initial_stock=float(states[0, STOCK]),
                       lead_times=cfg.evaluation.lead_times, catalog=prep.ctx.catalog,
                       holding=cfg.evaluation.holding)
        results.append(res)
    return merge_ops(results), results


def forecast_units(prep, yh_norm):
    return prep.ctx.to_units(yh_norm)


def classical_forecasts(prep, cfg, ds):
    """Naive, seasonal naive and linear AR forecasts (units) for the samples of ``ds``."""
    period = cfg.evaluation.seasonal_period
    order = cfg.evaluation.ar_order
    t_train = prep.split.t_train
    naive = prep.ctx.to_units(ds.x[:, -1])
    seasonal = np.array([prep.demand[s, t - period] if t >= period else prep.demand[s, t - 1]
                         for s, t in zip(ds.series, ds.t)])
    ar = np.zeros(len(ds))
    for s in np.unique(ds.series):
        model = bl.linear_ar_fit(prep.demand[s, :t_train], min(order, t_train - 2))
        for k in np.flatnonzero(ds.series == s):
            ar[k] = bl.linear_ar_forecast(prep.demand[s, :ds.t[k]], model)
    return {"Naive": naive, "Seasonal Naive": seasonal, "Linear AR": np.maximum(ar, 0.0)}


# -- one seed, full comparison ----------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    forecast: dict
    ops: dict
    fitted: dict = field(default_factory=dict)
    ledgers: dict = field(default_factory=dict)


def run_seed(panel, cfg, seed, keep_models=False):
    """Train the hybrid and the recurrent baselines for one seed and score everything on test."""
    prep = prepare(panel, cfg, seed)
    test = prep.test
    y_units = prep.ctx.to_units(test.y)
    hybrid = fit_variant(prep, cfg, seed, "full")
    lstm = fit_variant(prep, cfg, seed, "forecast-only", cell="lstm")
    gru = fit_variant(prep, cfg, seed, "forecast-only", cell="gru")
    preds = {name: forecasts(prep, f, test) for name, f in
             (("LSTM", lstm), ("GRU", gru), ("Proposed Hybrid", hybrid))}
    fc = {name: forecast_metrics(y_units, v) for name, v in classical_forecasts(prep, cfg, test).items()}
    for name, v in preds.items():
        fc[name] = forecast_metrics(y_units, prep.ctx.to_units(v))
    rule = repair_rule_policy(prep.ctx)
    hybrid_act = decision_policy(hybrid, prep) if hybrid.decision_policy else rule
    runs = {
        "Baseline EOQ": (eoq_policy(prep, cfg), preds["LSTM"]),
        "Heuristic Reorder": (reorder_policy(prep, cfg), preds["LSTM"]),
        "LSTM-based Policy": (rule, preds["LSTM"]),
        "GRU-based Policy": (rule, preds["GRU"]),
        "Proposed Hybrid": (hybrid_act, preds["Proposed Hybrid"]),
    }
    ops = {}
    ledgers = {}
    for name, (act, yh) in runs.items():
        ops[name], sims = simulate_policy(prep, cfg, act, yh)
        ledgers[name] = [r.ledger for r in sims]
    fitted = {"hybrid": hybrid, "lstm": lstm, "gru": gru} if keep_models else {}
    return SeedResult(seed, fc, ops, fitted, ledgers if keep_models else {})


METRIC_KEYS = {"forecast": ("MAE", "RMSE", "MAPE (%)", "sMAPE (%)"),
               "ops": ("Inventory Cost", "Stockout Rate (%)", "Service Level (%)", "Total Cost")}


def summarize(results, kind):
    """Per model and metric: mean, std, CI95 over seeds (rows in model order)."""
    models = list(getattr(results[0], kind))
    rows = []
    for m in models:
        for key in METRIC_KEYS[kind]:
            vals = [getattr(r, kind)[m].as_row()[key] for r in results]
            st = confidence_interval(vals)
            rows.append({"model": m, "metric": key, "mean": st.mean, "std": st.std, "n": st.n,
                         "ci_low": st.ci_low, "ci_high": st.ci_high})
    return rows


def wide_table(results, kind, label):
    models = list(getattr(results[0], kind))
    rows = []
    for m in models:
        row = {label: m}
        for key in METRIC_KEYS[kind]:
            row[key] = float(np.mean([getattr(r, kind)[m].as_row()[key] for r in results]))
        rows.append(row)
    return rows


def ttests(results, kind, a, b):
    """Paired t-tests of model ``a`` against ``b`` over seeds, one row per metric."""
    rows = []
    for key in METRIC_KEYS[kind]:
        xa = [getattr(r, kind)[a].as_row()[key] for r in results]
        xb = [getattr(r, kind)[b].as_row()[key] for r in results]
        row = {"kind": kind, "metric": key, "a": a, "b": b, "n": len(xa)}
        try:
            st = paired_ttest(xa, xb)
            row.update(mean_diff=st.mean, std_diff=st.std, ci_low=st.ci_low, ci_high=st.ci_high, t=st.t, p=st.p)
        except DataError as exc:
            row.update(mean_diff=float(np.mean(np.subtract(xa, xb))), std_diff=0.0, ci_low=math.nan,
                       ci_high=math.nan, t=math.nan, p=math.nan, note=str(exc))
        rows.append(row)
    return rows


# -- parallel map -----------------------------------------------------------------

def _call(job):
    fn, args = job
    return fn(*args)


def map_jobs(fn, arg_list, workers=1):
    """Run ``fn(*args)`` for each entry; results come back in input order."""
    arg_list = list(arg_list)
    if workers <= 1 or len(arg_list) <= 1:
        return [fn(*a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, [(fn, a) for a in arg_list]))


def run_seeds(panel, cfg, seeds=None, workers=1):
    seeds = cfg.evaluation.seeds if seeds is None else seeds
    return map_jobs(run_seed, [(panel, cfg, s) for s in seeds], workers)


# -- ablation ---------------------------------------------------------------------

def ablation_cell(panel, cfg, seed, variant):
    """Metrics of one ablation configuration for one seed (forecast metrics None when not applicable)."""
    prep = prepare(panel, cfg, seed, embeddings=variant != "no-embeddings",
                   augment=False if variant == "no-augmentation" else None)
    fitted = fit_variant(prep, cfg, seed, variant)
    yh = forecasts(prep, fitted, prep.test)
    act = decision_policy(fitted, prep) if fitted.decision_policy else repair_rule_policy(prep.ctx)
    ops, _ = simulate_policy(prep, cfg, act, yh)
    row = {"variant": variant, "seed": seed}
    if variant == "supply-only":
        row.update({"MAE": None, "RMSE": None, "MAPE (%)": None})
    else:
        fm = forecast_metrics(prep.ctx.to_units(prep.test.y), prep.ctx.to_units(yh))
        row.update({"MAE": fm.mae, "RMSE": fm.rmse, "MAPE (%)": fm.mape})
    row.update({"Inventory Cost": ops.inventory_cost, "Stockout Rate (%)": ops.stockout_rate,
                "Service Level (%)": ops.service_level, "Total Cost": ops.total_cost})
    return row


@dataclass
class AblationResult:
    rows: list
    per_seed: list


def ablation_run(panel, cfg, toggles=(), seeds=None, workers=1):
    """Full hybrid plus one row per toggle, averaged over seeds with identical splits."""
    toggles = list(dict.fromkeys(toggles))
    bad = [t for t in toggles if t not in TOGGLES]
    if bad:
        raise UsageError(f"unknown ablation toggle(s) {bad}; expected a subset of {list(TOGGLES)}", "experiment")
    seeds = cfg.evaluation.seeds if seeds is None else seeds
    variants = ["full"] + toggles
    jobs = [(panel, cfg, s, v) for v in variants for s in seeds]
    cells = map_jobs(ablation_cell, jobs, workers)
    rows = []
    for v in variants:
        mine = [c for c in cells if c["variant"] == v]
        row = {"Configuration": ABLATION_LABELS[v]}
        for key in ABLATION_COLUMNS[1:]:
            vals = [c[key] for c in mine]
            row[key] = None if any(x is None for x in vals) else float(np.mean(vals))
        rows.append(row)
    return AblationResult(rows, cells)


# -- sensitivity --------------------------------------------------------------------

def with_setting(cfg, axis, value):
    if axis in ("lr", "batch_size", "lambda1", "lambda2"):
        cast = int if axis == "batch_size" else float
        return replace(cfg, train=replace(cfg.train, **{axis: cast(value)}))
    if axis == "embed_dim":
        return replace(cfg, model=replace(cfg.model, embed_dim=int(value)))
    if axis == "window":
        return replace(cfg, preprocess=replace(cfg.preprocess, window=int(value)))
    raise UsageError(f"unknown sensitivity axis '{axis}'; expected one of {SWEEP_AXES}", "experiment")


def sweep_cells(grid):
    """(axis, value) pairs varied one at a time, duplicates removed, order kept."""
    if not grid or not any(grid.values()):
        raise UsageError("sensitivity grid is empty", "experiment")
    cells = []
    for axis, values in grid.items():
        if axis not in SWEEP_AXES:
            raise UsageError(f"unknown sensitivity axis '{axis}'; expected one of {SWEEP_AXES}", "experiment")
        for v in values:
            if (axis, v) not in cells:
                cells.append((axis, v))
    return cells


def sweep_cell(panel, cfg, seed, axis, value):
    c = with_setting(cfg, axis, value)
    prep = prepare(panel, c, seed)
    fitted = fit_variant(prep, c, seed, "full")
    yh = forecasts(prep, fitted, prep.test)
    fm = forecast_metrics(prep.ctx.to_units(prep.test.y), prep.ctx.to_units(yh))
    act = decision_policy(fitted, prep) if fitted.decision_policy else repair_rule_policy(prep.ctx)
    ops, _ = simulate_policy(prep, c, act, yh)
    return {"axis": axis, "value": value, "seed": seed, "MAE": fm.mae, "Total Cost": ops.total_cost,
            "Service Level (%)": ops.service_level}


def sensitivity_sweep(panel, cfg, grid, seeds=None, workers=1):
    """One row per (parameter, value), metrics averaged over seeds."""
    cells = sweep_cells(grid)
    seeds = cfg.evaluation.seeds if seeds is None else seeds
    jobs = [(panel, cfg, s, a, v) for (a, v), s in itertools.product(cells, seeds)]
    out = map_jobs(sweep_cell, jobs, workers)
    rows = []
    for a, v in cells:
        mine = [o for o in out if o["axis"] == a and o["value"] == v]
        rows.append({"Parameter": a, "Value": v,
                     **{k: float(np.mean([o[k] for o in mine])) for k in ("MAE", "Total Cost",
                                                                         "Service Level (%)")}})
    return rows


def pretrain_only(panel, cfg, seed):
    prep = prepare(panel, cfg, seed)
    theta, _ = init_params(prep, seed)
    problem = Problem(prep.fcfg, prep.train, prep.val, prep.dcfg, prep.ctx, cfg.cost.params())
    theta, hist = pretrain_forecaster(problem, theta, replace(cfg.train, seed=seed))
    return prep, theta, hist


# -- gradient checks ------------------------------------------------------------------

def tiny_problem(seed, cfg=None, batch=6, vocab=(3, 4)):
    """Random problem on the tiny architecture (window 5, embed 2, LSTM 4, decision 4/3).

    Returns ``(problem, theta, phi, dataset)``; ``cfg`` (a RunConfig) only
    contributes the cell kind, stochastic flag and cost parameters.
    """
    from .config import tiny_config

    cfg = cfg or tiny_config()
    rng = np.random.default_rng(seed)
    window = 5
    fcfg = ForecasterConfig(window=window, vocab_sizes=vocab, embed_dim=2, hidden=(4,), dense=4,
                            cell=cfg.model.cell, stochastic=False)
    dcfg = DecisionConfig(len(STATE_FIELDS), (4, 3), 0.0)
    states = np.zeros((batch, len(STATE_FIELDS)))
    states[:, STOCK] = rng.uniform(0, 60, batch)
    states[:, LEAD] = rng.uniform(0, 6, batch)
    states[:, LEAD_MAX] = 5.0
    states[:, REL] = rng.uniform(0.7, 1.0, batch)
    states[:, REL_MIN] = 0.8
    states[:, DEFECT] = rng.uniform(0, 0.05, batch)
    states[:, C_PROD] = 0.1
    states[:, C_HOLD] = 1.0
    states[:, C_T0:C_T2 + 1] = rng.uniform(0.05, 0.3, (batch, 3))
    states[:, C_SHORT] = 5.0
    ds = WindowedDataset(
        x=rng.uniform(0, 1, (batch, window)), y=rng.uniform(0, 1, batch),
        contexts=np.stack([rng.integers(0, v, batch) for v in vocab], axis=1),
        states=states, t=np.arange(batch), series=np.zeros(batch, dtype=np.int64),
        split=np.full(batch, "train", dtype=object), window=window)
    ctx = SupplyContext(10.0, 100.0, fit_scaler(states), cost_scale=50.0)
    problem = Problem(fcfg, ds, ds, dcfg, ctx, cfg.cost.params())
    theta = init_forecaster(fcfg, rng)
    phi = init_decision(dcfg, rng)
    for name in phi:
        if name.endswith(".b"):
            phi[name] = rng.uniform(0.05, 0.2, phi[name].shape)
    return problem, theta, phi, ds


def gradient_error(seed, tcfg, cfg=None, wrt=("theta", "phi"), step=1e-5, retries=20):
    """Max relative tape-vs-central-difference error of L_total on a tiny problem.

    Problems whose relu/hinge inputs land on a kink are redrawn (new seed).
    Returns ``(error, seed used)``.
    """
    from .autodiff import NonDifferentiablePoint, grad_check
    from .trainer import loss_function

    for k in range(retries):
        s = seed + 7919 * k
        problem, theta, phi, ds = tiny_problem(s, cfg)
        _, arrays, fn = loss_function(theta, phi, problem, ds, tcfg, wrt)
        try:
            return grad_check(fn, arrays, step), s
        except NonDifferentiablePoint:
            continue
    raise NumericError("every drawn problem hit a kink", "experiment")
