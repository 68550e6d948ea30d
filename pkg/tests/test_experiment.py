import numpy as np
import pytest

from demandsupply.config import tiny_config
from demandsupply.data import Panel, SyntheticSpec, generate_synthetic
from demandsupply.errors import DataError, UsageError
from demandsupply.experiment import (
    ablation_run, map_jobs, prepare, sensitivity_sweep, sweep_cell, sweep_cells, with_setting,
)
from demandsupply.supply import LEAD


def _panel(**kw):
    spec = dict(horizon=100, n_products=2, n_categories=2, category_shift=20.0)
    spec.update(kw)
    return generate_synthetic(SyntheticSpec(**spec))[0]


def _cfg():
    cfg = tiny_config()
    cfg.train.max_epochs = 1
    cfg.evaluation.seeds = (0,)
    return cfg


def test_prepare_uses_training_rows_only():
    panel = _panel()
    cfg = _cfg()
    a = prepare(panel, cfg, 0)
    t_train = a.split.t_train
    changed = Panel(panel.demand.copy(), panel.states.copy(),
                    {k: v.copy() for k, v in panel.contexts.items()}, panel.products, panel.dates)
    changed.demand[:, t_train:] *= 7.0
    changed.states[:, t_train:, LEAD] += 3.0
    changed.contexts["category"][:, t_train:] = "brand-new"
    b = prepare(changed, cfg, 0)
    assert (a.demand_scaler.mins, a.demand_scaler.maxs) == (b.demand_scaler.mins, b.demand_scaler.maxs)
    np.testing.assert_array_equal(a.ctx.state_scaler.mins, b.ctx.state_scaler.mins)
    np.testing.assert_array_equal(a.ctx.state_scaler.maxs, b.ctx.state_scaler.maxs)
    assert a.info["vocab"] == b.info["vocab"]
    assert a.ctx.cost_scale == b.ctx.cost_scale
    np.testing.assert_array_equal(a.train.x, b.train.x)
    # unseen labels after the training split map to the unknown index
    assert np.all(b.test.contexts[:, 0] == 0)


def test_prepare_imputes_missing_demand_from_training_mean():
    panel = _panel()
    panel.demand[0, 3] = np.nan
    panel.demand[1, 95] = np.nan
    prep = prepare(panel, _cfg(), 0)
    train_mean = np.nanmean(np.concatenate([panel.demand[:, :prep.split.t_train].reshape(-1)]))
    assert prep.demand[0, 3] == pytest.approx(train_mean)
    assert prep.demand[1, 95] == pytest.approx(train_mean)


def test_augmentation_only_touches_training_split():
    panel = _panel()
    cfg = _cfg()
    plain = prepare(panel, cfg, 0, augment=False)
    aug = prepare(panel, cfg, 0, augment=True)
    assert len(aug.train) == 2 * len(plain.train)
    assert len(aug.val) == len(plain.val) and len(aug.test) == len(plain.test)
    np.testing.assert_array_equal(aug.val.x, plain.val.x)
    np.testing.assert_array_equal(aug.test.states, plain.test.states)
    assert aug.info["supplier_records_dropped"] > 0


def test_prepare_rejects_short_horizon():
    with pytest.raises(DataError):
        prepare(_panel(horizon=6), _cfg(), 0)


def test_unknown_ablation_toggle():
    with pytest.raises(UsageError, match="unknown ablation toggle"):
        ablation_run(_panel(), _cfg(), ["no-dropout"])


def test_empty_ablation_is_single_row():
    res = ablation_run(_panel(), _cfg(), ())
    assert [r["Configuration"] for r in res.rows] == ["Full Hybrid"]


def test_sweep_cells():
    assert sweep_cells({"lr": [1e-4, 5e-4, 1e-3]}) == [("lr", 1e-4), ("lr", 5e-4), ("lr", 1e-3)]
    assert sweep_cells({"lr": [1e-3, 1e-3], "batch_size": [32]}) == [("lr", 1e-3), ("batch_size", 32)]
    with pytest.raises(UsageError):
        sweep_cells({})
    with pytest.raises(UsageError):
        sweep_cells({"lr": []})
    with pytest.raises(UsageError):
        sweep_cells({"momentum": [0.9]})
    assert with_setting(_cfg(), "embed_dim", 16).model.embed_dim == 16


def test_sweep_rows_and_cell_determinism():
    panel = _panel()
    cfg = _cfg()
    rows = sensitivity_sweep(panel, cfg, {"lr": [1e-4, 5e-4, 1e-3]})
    assert [r["Value"] for r in rows] == [1e-4, 5e-4, 1e-3]
    assert sweep_cell(panel, cfg, 0, "batch_size", 16) == sweep_cell(panel, cfg, 0, "batch_size", 16)


def _square(x):
    return x * x


def test_map_jobs_process_pool_matches_serial():
    args = [(k,) for k in range(6)]
    assert map_jobs(_square, args, workers=2) == map_jobs(_square, args, workers=1) == [k * k for k in range(6)]
