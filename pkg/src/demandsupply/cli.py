"""Command-line entry point.

    demandsupply SUBCOMMAND [--config PATH] [--seed N] [--out DIR] [--workers N]
                 [--cell {lstm,rnn,gru}] [--detach] [--stochastic-head]

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from . import experiment as ex
from .config import OUT_ENV, RunConfig, config_hash, dump_config, load_config, tiny_config, to_dict
from .data import generate_synthetic, ingest_csv, panel_from_table, write_panel_csv
from .errors import ArtifactError, NumericError, UsageError
from .evaluate import LEDGER_COLUMNS
from .forecaster import save_params
from .supply import STATE_FIELDS

log = logging.getLogger("demandsupply")

SUBCOMMANDS = ("preprocess", "pretrain", "train", "evaluate", "simulate", "ablate", "sweep", "gradcheck",
               "synth", "report")
GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, "cli")


def build_parser():
    p = _Parser(prog="demandsupply", description="Joint demand forecasting and replenishment experiments.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<subcommand> or runs/<subcommand>)")
    p.add_argument("--workers", type=int, help="concurrent runs for seeds and grid cells")
    p.add_argument("--cell", choices=("lstm", "rnn", "gru"), help="recurrent cell of the hybrid forecaster")
    p.add_argument("--detach", action="store_true", help="block supply gradients from reaching the forecaster")
    p.add_argument("--stochastic-head", action="store_true", help="train a predictive std and sample forecasts")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.evaluation = replace(cfg.evaluation, seeds=(args.seed,))
    if args.cell:
        cfg.model = replace(cfg.model, cell=args.cell)
    if args.detach:
        cfg.train = replace(cfg.train, detach=True)
    if args.stochastic_head:
        cfg.model = replace(cfg.model, stochastic_head=True)
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be at least 1", "cli")
        cfg.workers = args.workers
    out = args.out or cfg.out
    if not out:
        out = os.path.join(os.environ.get(OUT_ENV) or "runs", args.subcommand)
    cfg.out = out
    return cfg


def load_panel(cfg):
    d = cfg.data
    if d.source == "synthetic":
        panel, _ = generate_synthetic(d.synthetic)
        return panel
    table = ingest_csv(d.path, d.schema)
    return panel_from_table(table, d.schema, d.state_defaults)


# -- output helpers ------------------------------------------------------------------

class Writer:
    """Writes tables into the run directory with a provenance header."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.dir = cfg.out
        os.makedirs(self.dir, exist_ok=True)
        self.hash = config_hash(cfg)
        self.seeds = list(cfg.evaluation.seeds)
        self.files = []

    def path(self, *parts):
        p = os.path.join(self.dir, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    @property
    def header(self):
        return [f"config_hash: {self.hash}", f"seeds: {' '.join(str(s) for s in self.seeds)}"]

    def table(self, name, rows, columns=None, json_too=True):
        columns = list(columns or (rows[0].keys() if rows else []))
        path = self.path(f"{name}.csv")
        with open(path, "w", newline="") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([_cell(r.get(c)) for c in columns])
        self.files.append(path)
        if json_too:
            jpath = self.path(f"{name}.json")
            with open(jpath, "w") as fh:
                json.dump({"meta": {"config_hash": self.hash, "seeds": self.seeds},
                           "columns": columns, "rows": [{c: _json(r.get(c)) for c in columns} for r in rows]},
                          fh, indent=2, sort_keys=True)
            self.files.append(jpath)
        return path

    def json(self, name, obj):
        path = self.path(f"{name}.json")
        with open(path, "w") as fh:
            json.dump({"meta": {"config_hash": self.hash, "seeds": self.seeds}, **_json(obj)}, fh, indent=2,
                      sort_keys=True)
        self.files.append(path)
        return path

    def summary(self, lines):
        path = self.path("summary.txt")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print("\n".join(lines))
        return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


def _json(v):
    if isinstance(v, dict):
        return {str(k): _json(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return _json(v.tolist())
    return v


def _fmt(v, width=12):
    if v is None:
        return "--".rjust(width)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return f"{v:{width}.3f}" if v == 0 or abs(v) >= 0.1 else f"{v:{width}.6g}"
    return str(v).rjust(width)


def render(rows, columns):
    first = max(len(str(r[columns[0]])) for r in rows) if rows else 10
    head = f"{columns[0]:<{first}}" + "".join(f"{c:>20}" for c in columns[1:])
    body = [f"{str(r[columns[0]]):<{first}}" + "".join(_fmt(r.get(c), 20) for c in columns[1:]) for r in rows]
    return [head, *body]


def _metric_rows(seed, fm=None, ops=None, label=None):
    row = {"seed": seed}
    if label:
        row["model"] = label
    if fm is not None:
        row.update(fm.as_row())
    if ops is not None:
        row.update(ops.as_row())
    return row


# -- subcommands --------------------------------------------------------------------

def cmd_synth(cfg, w):
    panel, info = generate_synthetic(cfg.data.synthetic)
    path = w.path("synthetic.csv")
    write_panel_csv(path, panel)
    schema = {"date": "date", "quantity": "quantity", "product": "product",
              "categorical": list(panel.contexts),
              "states": {f: f for f in STATE_FIELDS}}
    with open(w.path("data_section.yaml"), "w") as fh:
        yaml.safe_dump({"data": {"source": "csv", "path": os.path.abspath(path), "schema": schema}}, fh,
                       sort_keys=False)
    w.json("synthetic", {"products": panel.n_products, "horizon": panel.horizon, "shocks": info["shocks"]})
    return [f"wrote {path}: {panel.n_products} product(s) x {panel.horizon} periods, {info['shocks']} shocks"]


def cmd_preprocess(cfg, w):
    panel = load_panel(cfg)
    seed = cfg.evaluation.seeds[0]
    prep = ex.prepare(panel, cfg, seed)
    info = dict(prep.info)
    info["demand_scaler"] = {"min": float(prep.demand_scaler.mins), "max": float(prep.demand_scaler.maxs)}
    info["forecaster"] = to_dict(prep.fcfg)
    w.json("preprocess", info)
    s = info["split"]
    return [f"split: t_train={s['t_train']} t_val={s['t_val']} horizon={s['horizon']}",
            f"windows: train={s['train']} val={s['val']} test={s['test']} dropped={s['dropped_windows']}",
            f"training samples after augmentation: {info['train_samples']}",
            f"cost scale: {info['cost_scale']:.6g}"]


def _save_history(w, hists, seed, tag=""):
    for phase, h in hists.items():
        h.write_csv(w.path(f"history_{phase}{tag}_seed{seed}.csv"), w.header)


def cmd_pretrain(cfg, w):
    panel = load_panel(cfg)
    lines = []
    for seed in cfg.evaluation.seeds:
        prep, theta, hist = ex.pretrain_only(panel, cfg, seed)
        save_params(w.path("checkpoints", f"theta_seed{seed}.npz"), theta,
                    {"seed": seed, "config_hash": w.hash, "phase": "pretrain"})
        _save_history(w, {"pretrain": hist}, seed)
        lines.append(f"seed {seed}: best epoch {hist.best_epoch}, val MSE {hist.best_val:.6g}")
    return lines


def _train_one(panel, cfg, seed):
    prep = ex.prepare(panel, cfg, seed)
    fitted = ex.fit_variant(prep, cfg, seed, "full")
    yh = ex.forecasts(prep, fitted, prep.test)
    fm = ex.forecast_metrics(prep.ctx.to_units(prep.test.y), prep.ctx.to_units(yh))
    act = ex.decision_policy(fitted, prep) if fitted.decision_policy else ex.repair_rule_policy(prep.ctx)
    ops, _ = ex.simulate_policy(prep, cfg, act, yh)
    return fitted, fm, ops


def cmd_train(cfg, w):
    panel = load_panel(cfg)
    runs = ex.map_jobs(_train_one, [(panel, cfg, s) for s in cfg.evaluation.seeds], cfg.workers)
    rows = []
    lines = []
    for seed, (fitted, fm, ops) in zip(cfg.evaluation.seeds, runs):
        meta = {"seed": seed, "config_hash": w.hash}
        save_params(w.path("checkpoints", f"theta_seed{seed}.npz"), fitted.theta, meta)
        save_params(w.path("checkpoints", f"phi_seed{seed}.npz"), fitted.phi, meta)
        _save_history(w, fitted.histories, seed)
        policy = "decision network" if fitted.decision_policy else "repair rule"
        rows.append({**_metric_rows(seed, fm, ops), "policy": policy})
        lines.append(f"seed {seed}: MAE {fm.mae:.4f}  total cost {ops.total_cost:.2f}  "
                     f"SL {ops.service_level:.2f}%  ({policy})")
    w.table("train_metrics", rows)
    return lines


def cmd_evaluate(cfg, w):
    panel = load_panel(cfg)
    results = ex.run_seeds(panel, cfg, workers=cfg.workers)
    fc = ex.wide_table(results, "forecast", "Model")
    ops = ex.wide_table(results, "ops", "Policy")
    w.table("forecast_table", fc)
    w.table("ops_table", ops)
    w.table("forecast_stats", ex.summarize(results, "forecast"))
    w.table("ops_stats", ex.summarize(results, "ops"))
    per_seed = []
    for r in results:
        per_seed += [_metric_rows(r.seed, fm=v, label=k) for k, v in r.forecast.items()]
        per_seed += [_metric_rows(r.seed, ops=v, label=k) for k, v in r.ops.items()]
    w.table("per_seed", per_seed, ["seed", "model", "MAE", "RMSE", "MAPE (%)", "sMAPE (%)", "Inventory Cost",
                                    "Stockout Rate (%)", "Service Level (%)", "Total Cost"])
    ref = {"gru": ("GRU", "GRU-based Policy"), "lstm": ("LSTM", "LSTM-based Policy")}[cfg.evaluation.compare_against]
    tests = (ex.ttests(results, "forecast", "Proposed Hybrid", ref[0])
             + ex.ttests(results, "ops", "Proposed Hybrid", ref[1]))
    w.table("ttests", tests, ["kind", "metric", "a", "b", "n", "mean_diff", "std_diff", "ci_low", "ci_high", "t",
                              "p", "note"])
    return (["Forecasting (mean over seeds)"] + render(fc, list(fc[0])) + ["", "Operations (mean over seeds)"]
            + render(ops, list(ops[0])))


def cmd_simulate(cfg, w):
    panel = load_panel(cfg)
    lines = []
    rows = []
    for seed in cfg.evaluation.seeds:
        r = ex.run_seed(panel, cfg, seed, keep_models=True)
        for policy, ledgers in r.ledgers.items():
            slug = policy.lower().replace(" ", "_").replace("-", "_")
            for k, ledger in enumerate(ledgers):
                with open(w.path("ledger", f"{slug}_seed{seed}_series{k}.csv"), "w", newline="") as fh:
                    for line in w.header:
                        fh.write(f"# {line}\n")
                    dw = csv.DictWriter(fh, fieldnames=LEDGER_COLUMNS)
                    dw.writeheader()
                    for rec in ledger:
                        dw.writerow({c: _cell(rec[c]) for c in LEDGER_COLUMNS})
            rows.append({"seed": seed, "Policy": policy, **r.ops[policy].as_row()})
        lines.append(f"seed {seed}: ledgers for {len(r.ledgers)} policies written")
    w.table("simulation", rows, ["seed", "Policy", "Inventory Cost", "Stockout Rate (%)", "Service Level (%)",
                                 "Total Cost"])
    return lines


def cmd_ablate(cfg, w):
    panel = load_panel(cfg)
    res = ex.ablation_run(panel, cfg, cfg.evaluation.ablation, workers=cfg.workers)
    w.table("ablation", res.rows, ex.ABLATION_COLUMNS)
    w.table("ablation_cells", res.per_seed, ["variant", "seed", *ex.ABLATION_COLUMNS[1:], "Total Cost"])
    return render(res.rows, list(ex.ABLATION_COLUMNS))


def cmd_sweep(cfg, w):
    panel = load_panel(cfg)
    rows = ex.sensitivity_sweep(panel, cfg, cfg.evaluation.sweep, workers=cfg.workers)
    cols = ["Parameter", "Value", "MAE", "Total Cost", "Service Level (%)"]
    w.table("sensitivity", rows, cols)
    return render(rows, cols)


def cmd_gradcheck(cfg, w):
    base = tiny_config()
    base.model = replace(base.model, cell=cfg.model.cell)
    base.cost = cfg.cost
    seed = cfg.evaluation.seeds[0]
    err, used = ex.gradient_error(seed, cfg.train, base)
    w.json("gradcheck", {"max_relative_error": err, "seed": used, "tolerance": GRADCHECK_TOL})
    line = f"gradcheck: max relative error {err:.3e} (tolerance {GRADCHECK_TOL:g}, seed {used})"
    if not err < GRADCHECK_TOL:
        print(line)
        raise NumericError(f"gradient check failed: {err:.3e} >= {GRADCHECK_TOL:g}", "cli")
    return [line]


def cmd_report(cfg, w):
    lines = []
    for name in ("forecast_table", "ops_table", "ablation", "sensitivity", "train_metrics", "ttests"):
        path = os.path.join(w.dir, f"{name}.json")
        if not os.path.exists(path):
            continue
        with open(path) as fh:
            doc = json.load(fh)
        lines += [f"== {name} (config {doc['meta']['config_hash']}) =="]
        lines += render(doc["rows"], doc["columns"]) if doc["rows"] else ["(empty)"]
        lines.append("")
    if not lines:
        raise UsageError(f"no result tables found in {w.dir}", "cli")
    return lines


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args)
        w = Writer(cfg)
        if args.subcommand != "report":
            dump_config(cfg, w.path("config.yaml"))
        lines = COMMANDS[args.subcommand](cfg, w)
        if args.subcommand == "report":
            print("\n".join(lines))
        else:
            w.summary([f"{args.subcommand}: config {w.hash}, seeds {list(cfg.evaluation.seeds)}", *lines])
        return 0
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
