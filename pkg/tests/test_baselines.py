import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demandsupply import autodiff as ad
from demandsupply.autodiff import Tape, grad_check
from demandsupply.baselines import (
    EoqParams, ReorderPolicy, ar_residuals, eoq_decision, eoq_quantity, gru_step, linear_ar_fit,
    linear_ar_forecast, naive_forecast, reorder_decision, reorder_point, seasonal_naive,
)
from demandsupply.errors import DataError, UsageError
from demandsupply.forecaster import cell_weights


def test_eoq_examples():
    assert eoq_quantity(EoqParams(1000, 50, 4)) == pytest.approx(math.sqrt(25000), abs=1e-9)
    assert eoq_quantity(EoqParams(4000, 50, 4)) == pytest.approx(2 * eoq_quantity(EoqParams(1000, 50, 4)))
    assert eoq_quantity(EoqParams(1000, 1e-12, 4)) < 1e-4
    with pytest.raises(UsageError):
        eoq_quantity(EoqParams(1000, 0, 4))


def test_reorder_rule():
    pol = ReorderPolicy(reorder_point=20.0, quantity=50.0)
    assert reorder_decision(21.0, pol) == 0.0
    assert reorder_decision(20.0, pol) == 50.0
    assert reorder_decision(3.0, pol) == 50.0
    assert reorder_point(12.0, 0.0, 3.0) == 36.0
    assert reorder_point(12.0, 0.0, 3.0, z=9.0) == 36.0
    assert reorder_point(10.0, 2.0, 4.0) == pytest.approx(40.0 + 1.645 * 4.0)
    with pytest.raises(UsageError):
        ReorderPolicy(-1.0, 5.0)


def test_eoq_decision_threshold():
    assert eoq_decision(4.0, 30.0, 5.0) == 30.0
    assert eoq_decision(5.0, 30.0, 5.0) == 0.0


def test_naive_forecasts():
    assert naive_forecast([3, 5, 7]) == 7
    assert seasonal_naive([1, 9, 1, 9], 2) == 1
    with pytest.raises(DataError):
        seasonal_naive([1, 2], 3)
    with pytest.raises(DataError):
        naive_forecast([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8), st.integers(2, 5))
def test_seasonal_naive_exact_on_periodic_series(cycle, reps):
    series = np.tile(cycle, reps + 1)
    p = len(cycle)
    for t in range(p, len(series)):
        assert seasonal_naive(series[:t], p) == series[t]


def test_ar1_recovered():
    y = 8.0 * 0.5 ** np.arange(30)
    model = linear_ar_fit(y, 1)
    assert abs(model.coefs[0] - 0.5) < 1e-8
    assert abs(model.intercept) < 1e-8
    assert linear_ar_forecast(y, model) == pytest.approx(0.5 * y[-1], abs=1e-8)


def test_ar_constant_series_uses_ridge():
    y = np.full(20, 4.0)
    with pytest.warns(RuntimeWarning, match="ridge"):
        model = linear_ar_fit(y, 2)
    assert model.regularized
    assert linear_ar_forecast(y, model) == pytest.approx(4.0, abs=1e-6)
    assert model.intercept + model.coefs.sum() * 4.0 == pytest.approx(4.0, abs=1e-6)


def test_ar_order_zero_is_mean():
    y = np.array([1.0, 2.0, 6.0])
    model = linear_ar_fit(y, 0)
    assert linear_ar_forecast(y, model) == pytest.approx(3.0)


def test_ar_errors():
    with pytest.raises(DataError):
        linear_ar_fit([1.0, 2.0], 2)
    # a sinusoid satisfies an exact order-2 recurrence, so three lags are collinear
    with pytest.warns(RuntimeWarning, match="ridge"):
        model = linear_ar_fit(np.sin(np.arange(30.0)), 3)
    with pytest.raises(DataError):
        linear_ar_forecast([1.0], model)


@pytest.mark.parametrize("seed", range(5))
def test_ar_residuals_orthogonal_to_design(seed):
    y = np.cumsum(np.random.default_rng(seed).normal(size=80))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        model = linear_ar_fit(y, 4)
    resid, X = ar_residuals(y, model)
    assert np.max(np.abs(X.T @ resid)) / max(1.0, np.abs(y).max()) < 1e-8


def _gru_layer(n_in, hidden, params):
    return cell_weights(ad.active_tape(), params, 0, n_in)


def test_gru_zero_weights_halves_state():
    params = {"rnn0.W": np.zeros((2 + 3, 9)), "rnn0.b": np.zeros(9)}
    with Tape() as tape:
        layer = _gru_layer(2, 3, params)
        h = np.array([[1.0, -2.0, 0.5]])
        out = gru_step(tape.constant(np.ones((1, 2))), tape.constant(h), layer)
    np.testing.assert_array_equal(out.value, 0.5 * h)


def test_gru_gradients_and_determinism():
    rng = np.random.default_rng(0)
    params = {"rnn0.W": rng.normal(size=(5, 9)) * 0.5, "rnn0.b": rng.normal(size=9) * 0.1}
    x = rng.normal(size=(2, 2))
    h0 = rng.normal(size=(2, 3))

    def fn(w, b, h):
        tape = ad.active_tape()
        tape.bind("rnn0.W", w)
        tape.bind("rnn0.b", b)
        layer = _gru_layer(2, 3, params)
        return ad.mean(ad.square(gru_step(tape.constant(x), h, layer)))

    assert grad_check(fn, [params["rnn0.W"], params["rnn0.b"], h0]) < 1e-4
    with Tape() as tape:
        layer = _gru_layer(2, 3, params)
        a = gru_step(tape.constant(x), tape.constant(h0), layer).value
        b = gru_step(tape.constant(x), tape.constant(h0), layer).value
    np.testing.assert_array_equal(a, b)
