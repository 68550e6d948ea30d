"""Two-phase training: forecaster pretraining, then joint fine-tuning.

Joint updates follow

    theta <- theta - lr * grad_theta(l1 * L_forecast + l2 * L_supply)
    phi   <- phi   - lr * grad_phi(l2 * L_supply)

where the supply loss reaches ``theta`` through the forecast fed to the
decision network, unless ``detach`` is set.  During the first
``coupling_warmup`` joint epochs the forecast is detached so the decision
network stops producing random-policy gradients before they reach ``theta``.
"""

import copy
import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import DataError, NumericError, UsageError
from .forecaster import forecast_loss, forward, predict, sample_forecast
from .supply import STOCK, DecisionVector, decide, decision_forward, supply_objective, total_cost

log = logging.getLogger(__name__)

PHASES = ("pretrain", "joint", "both")
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_mae", "val_rmse", "val_mape", "val_sl",
                   "val_total_cost")


@dataclass
class TrainConfig:
    lambda1: float = 0.6
    lambda2: float = 0.4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    phases: str = "both"
    pretrain_epochs: int = None
    detach: bool = False
    clip_norm: float = 5.0
    coupling_warmup: int = 5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise UsageError("loss weights must be nonnegative", "trainer")
        if self.patience < 1:
            raise UsageError("patience must be at least 1", "trainer")
        if self.phases not in PHASES:
            raise UsageError(f"phases must be one of {PHASES}", "trainer")
        if self.coupling_warmup < 0:
            raise UsageError("coupling warmup must be nonnegative", "trainer")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise UsageError("batch size and max epochs must be positive", "trainer")


def total_loss(l_forecast, l_supply, lambda1, lambda2):
    if isinstance(l_forecast, ad.Tensor) or isinstance(l_supply, ad.Tensor):
        return ad.add(ad.scale(l_forecast, lambda1), ad.scale(l_supply, lambda2))
    return lambda1 * l_forecast + lambda2 * l_supply


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, cfg):
    """Bias-corrected Adam update of ``params`` in place.

    Parameters without an entry in ``grads`` are left alone.  A non-finite
    gradient aborts the whole step before anything is modified.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'", "trainer")
        if g.shape != params[name].shape:
            raise NumericError(f"gradient shape {g.shape} does not match parameter '{name}' {params[name].shape}",
                               "trainer")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        params[name] = params[name] - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


def clip_global_norm(grads, max_norm):
    if not max_norm:
        return grads, None
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        k = max_norm / norm
        grads = {n: g * k for n, g in grads.items()}
    return grads, norm


@dataclass
class Problem:
    """Everything a training run needs besides parameters.

    ``train``/``val`` are windowed datasets with normalized windows and
    targets and raw supply states; ``ctx`` converts units for the supply
    objective.
    """

    fcfg: object
    train: object
    val: object
    dcfg: object = None
    ctx: object = None
    cost: object = None
    frozen_forecast: object = None

    def forecast(self, theta, x, contexts):
        """Normalized point forecasts for windows ``x``; a frozen forecast ignores ``theta``."""
        if self.frozen_forecast is not None:
            return np.asarray(self.frozen_forecast(x), dtype=np.float64).reshape(-1)
        return predict(theta, self.fcfg, x, contexts)


@dataclass
class History:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")
    stopped_early: bool = False

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.DictWriter(fh, fieldnames=("phase",) + HISTORY_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in ("phase",) + HISTORY_COLUMNS})


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def _forecast_metrics_units(y_true, y_pred):
    e = y_pred - y_true
    nz = y_true != 0
    mape = float(100.0 * np.mean(np.abs(e[nz]) / np.abs(y_true[nz]))) if nz.any() else float("nan")
    return float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e * e))), mape


def _ops_summary(decisions, states, demand):
    cost = 0.0
    served = 0
    for d, s, y in zip(decisions, states, demand):
        cost += total_cost(d.q_order, s, y, d.chosen_mode()).total
        served += int(s[STOCK] + d.q_order >= y)
    return served / max(len(demand), 1), cost


def _repair_rule(y_units, states):
    return [DecisionVector(max(0.0, float(yh) - s[STOCK]), mode=int(np.argmin(s[8:11])))
            for yh, s in zip(y_units, states)]


def evaluate_split(theta, phi, problem, ds, cfg, joint):
    """Validation loss plus reporting metrics in original units."""
    mu = problem.forecast(theta, ds.x, ds.contexts)
    mse = float(np.mean((mu - ds.y) ** 2))
    row = {"val_mae": float("nan"), "val_rmse": float("nan"), "val_mape": float("nan"),
           "val_sl": float("nan"), "val_total_cost": float("nan")}
    ctx = problem.ctx
    if ctx is not None:
        y_units = ctx.to_units(ds.y)
        yh_units = ctx.to_units(mu)
        row["val_mae"], row["val_rmse"], row["val_mape"] = _forecast_metrics_units(y_units, yh_units)
        if joint and phi is not None:
            decisions = decide(mu, ds.states, phi, problem.dcfg, ctx)
        else:
            decisions = _repair_rule(yh_units, ds.states)
        row["val_sl"], row["val_total_cost"] = _ops_summary(decisions, ds.states, y_units)
    if not joint:
        return mse, row
    with Tape() as tape:
        y_hat = tape.constant(mu[:, None])
        dec = decision_forward(y_hat, ctx.scaled_states(ds.states), phi, problem.dcfg)
        ls, _ = supply_objective(y_hat, dec, ds.states, ctx.to_units(ds.y), ctx,
                                 problem.cost)
    return total_loss(mse, float(ls.value), cfg.lambda1, cfg.lambda2), row


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _fit(theta, phi, problem, cfg, joint, max_epochs):
    if len(problem.train) == 0:
        raise DataError("training split is empty", "trainer")
    if len(problem.val) == 0:
        raise DataError("validation split is empty; early stopping needs it", "trainer")
    rng_shuffle, rng_f, rng_d, rng_s = _streams(cfg.seed)
    theta = {k: v.copy() for k, v in theta.items()}
    phi = {k: v.copy() for k, v in phi.items()} if phi is not None else None
    state = AdamState()
    hist = History()
    best = (copy.deepcopy(theta), copy.deepcopy(phi))
    since_best = 0
    train = problem.train
    phase = "joint" if joint else "pretrain"
    frozen = problem.frozen_forecast is not None
    if frozen and not joint:
        raise UsageError("a frozen forecast cannot be pretrained", "trainer")
    for epoch in range(1, max_epochs + 1):
        losses = []
        for bi, idx in enumerate(_batches(len(train), cfg.batch_size, rng_shuffle)):
            xb, yb, cb = train.x[idx], train.y[idx], train.contexts[idx]
            with Tape() as tape:
                if frozen:
                    y_in = tape.constant(problem.forecast(None, xb, cb)[:, None])
                    lf = 0.0
                else:
                    dist = forward(theta, problem.fcfg, xb, cb, train=True, rng=rng_f)
                    lf = forecast_loss(yb, dist.mu)
                if joint:
                    if not frozen:
                        y_hat = sample_forecast(dist, rng_s)
                        detached = cfg.detach or epoch <= cfg.coupling_warmup
                        y_in = tape.detach(y_hat) if detached else y_hat
                    sb = train.states[idx]
                    dec = decision_forward(y_in, problem.ctx.scaled_states(sb), phi, problem.dcfg,
                                           train=True, rng=rng_d)
                    ls, _ = supply_objective(y_in, dec, sb, problem.ctx.to_units(yb), problem.ctx, problem.cost)
                    loss = ad.scale(ls, cfg.lambda2) if frozen else total_loss(lf, ls, cfg.lambda1, cfg.lambda2)
                else:
                    loss = lf
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericError(f"loss diverged at epoch {epoch}, batch {bi}", "trainer")
            grads = tape.grads_by_name(tape.backward(loss))
            grads, _ = clip_global_norm(grads, cfg.clip_norm)
            targets = {} if frozen else dict(theta)
            if joint:
                targets.update(phi)
            adam_step(targets, grads, state, cfg)
            for name in theta if not frozen else ():
                theta[name] = targets[name]
            if joint:
                for name in phi:
                    phi[name] = targets[name]
            losses.append(value)
        val_loss, row = evaluate_split(theta, phi, problem, problem.val, cfg, joint)
        if not np.isfinite(val_loss):
            raise NumericError(f"validation loss diverged at epoch {epoch}", "trainer")
        row.update(phase=phase, epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val_loss)
        hist.rows.append(row)
        log.debug("%s epoch %d train %.6g val %.6g", phase, epoch, row["train_loss"], val_loss)
        if val_loss < hist.best_val:
            hist.best_val = val_loss
            hist.best_epoch = epoch
            best = (copy.deepcopy(theta), copy.deepcopy(phi))
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                hist.stopped_early = True
                break
    return best[0], best[1], hist


def pretrain_forecaster(problem, theta, cfg):
    """Phase 1: minimize forecast MSE; returns parameters of the best validation epoch."""
    theta, _, hist = _fit(theta, None, problem, cfg, joint=False,
                          max_epochs=cfg.pretrain_epochs or cfg.max_epochs)
    return theta, hist


def train_joint(problem, theta, phi, cfg):
    """Phase 2: joint fine-tuning of forecaster and decision network."""
    if problem.ctx is None or problem.dcfg is None or problem.cost is None:
        raise UsageError("joint training needs decision config, supply context and cost parameters", "trainer")
    return _fit(theta, phi, problem, cfg, joint=True, max_epochs=cfg.max_epochs)


def train(problem, theta, phi, cfg):
    """Run the phases selected by ``cfg.phases``; returns (theta, phi, histories)."""
    histories = {}
    if cfg.phases in ("pretrain", "both"):
        theta, histories["pretrain"] = pretrain_forecaster(problem, theta, cfg)
    if cfg.phases in ("joint", "both"):
        theta, phi, histories["joint"] = train_joint(problem, theta, phi, cfg)
    return theta, phi, histories


def batch_total_loss(theta, phi, problem, ds, cfg):
    """Eval-mode L_total of dataset ``ds`` on the active tape.

    Dropout is off and the forecast mean feeds the decision network, so the
    result is a deterministic function of the parameters.
    """
    tape = ad.active_tape()
    dist = forward(theta, problem.fcfg, ds.x, ds.contexts)
    lf = forecast_loss(ds.y, dist.mu)
    y_in = tape.detach(dist.mu) if cfg.detach else dist.mu
    dec = decision_forward(y_in, problem.ctx.scaled_states(ds.states), phi, problem.dcfg)
    ls, _ = supply_objective(y_in, dec, ds.states, problem.ctx.to_units(ds.y), problem.ctx, problem.cost)
    return total_loss(lf, ls, cfg.lambda1, cfg.lambda2)


def loss_function(theta, phi, problem, ds, cfg, wrt=("theta", "phi")):
    """``(names, arrays, fn)`` with ``fn(*leaves)`` evaluating :func:`batch_total_loss`.

    Only the parameters of the groups in ``wrt`` become leaves of ``fn``; the
    rest enter as regular parameters.  Suited to :func:`autodiff.grad_check`.
    """
    groups = {"theta": theta, "phi": phi}
    names = [(g, n) for g in wrt for n in sorted(groups[g])]

    def fn(*leaves):
        tape = ad.active_tape()
        for (_, n), leaf in zip(names, leaves):
            tape.bind(n, leaf)
        return batch_total_loss(theta, phi, problem, ds, cfg)

    return [n for _, n in names], [groups[g][n] for g, n in names], fn


def default_lambda_grid():
    """lambda1 in {0.5..0.9} x lambda2 in {0.1..0.5}, steps of 0.1."""
    l1 = [round(0.5 + 0.1 * i, 10) for i in range(5)]
    l2 = [round(0.1 + 0.1 * i, 10) for i in range(5)]
    return [(a, b) for a in l1 for b in l2]


def grid_search_lambdas(problem, theta, phi, grid, cfg, runner=None):
    """Joint-train every (lambda1, lambda2) cell and keep the lowest validation loss.

    Ties go to the smaller lambda2.  ``runner`` replaces :func:`train_joint`
    (used to parallelize or stub runs) and must return the best validation
    loss for a config.
    """
    grid = list(grid)
    if not grid:
        raise UsageError("lambda grid is empty", "trainer")
    table = []
    for l1, l2 in grid:
        run_cfg = replace(cfg, lambda1=l1, lambda2=l2)
        if runner is not None:
            val = runner(run_cfg)
        else:
            _, _, hist = train_joint(problem, theta, phi, run_cfg)
            val = hist.best_val
        table.append({"lambda1": l1, "lambda2": l2, "val_loss": float(val)})
    best = min(table, key=lambda r: (r["val_loss"], r["lambda2"]))
    return (best["lambda1"], best["lambda2"]), table

