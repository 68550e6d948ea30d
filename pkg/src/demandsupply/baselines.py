"""Classical forecasting and replenishment baselines."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .forecaster import gru_step  # noqa: F401  (GRU baseline cell, shared with the forecaster)

Z_95 = 1.645


@dataclass
class EoqParams:
    demand: float
    order_cost: float
    holding_cost: float


def eoq_quantity(p):
    """Economic order quantity sqrt(2 D S / H)."""
    if p.demand <= 0 or p.order_cost <= 0 or p.holding_cost <= 0:
        raise UsageError(f"EOQ parameters must be positive, got {p}", "baselines")
    return math.sqrt(2.0 * p.demand * p.order_cost / p.holding_cost)


@dataclass
class ReorderPolicy:
    reorder_point: float
    quantity: float
    z: float = Z_95

    def __post_init__(self):
        if self.reorder_point < 0 or self.quantity < 0:
            raise UsageError("reorder point and quantity must be nonnegative", "baselines")


def reorder_point(mean_demand, std_demand, lead_time, z=Z_95):
    """mean * L + z * std * sqrt(L)."""
    return mean_demand * lead_time + z * std_demand * math.sqrt(lead_time)


def reorder_decision(stock, policy):
    if stock < 0:
        raise DataError("stock must be nonnegative", "baselines")
    return policy.quantity if stock <= policy.reorder_point else 0.0


def eoq_decision(stock, q_star, threshold):
    """Order ``q_star`` once stock drops below ``threshold`` (one period's mean demand)."""
    return q_star if stock < threshold else 0.0


def naive_forecast(series):
    if len(series) < 1:
        raise DataError("naive forecast needs at least one observation", "baselines")
    return float(series[-1])


def seasonal_naive(series, period):
    if period < 1 or len(series) < period:
        raise DataError(f"seasonal naive with period {period} needs at least {period} observations",
                        "baselines")
    return float(series[len(series) - period])


@dataclass
class ArModel:
    intercept: float
    coefs: np.ndarray
    regularized: bool = False

    @property
    def order(self):
        return len(self.coefs)


def _design(series, p):
    y = np.asarray(series, dtype=np.float64)
    rows = len(y) - p
    lags = np.column_stack([y[p - k - 1:p - k - 1 + rows] for k in range(p)]) if p else np.zeros((rows, 0))
    return np.column_stack([np.ones(rows), lags]), y[p:]


def linear_ar_fit(series, p):
    """Least-squares AR(p) with intercept; ``coefs[k]`` multiplies lag ``k+1``.

    A rank-deficient design falls back to ridge with a 1e-8 regularizer and
    sets ``regularized``.
    """
    y = np.asarray(series, dtype=np.float64)
    if p < 0 or len(y) <= p:
        raise DataError(f"AR({p}) needs more than {p} observations", "baselines")
    X, target = _design(y, p)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        warnings.warn("singular AR design; using ridge fallback", RuntimeWarning, stacklevel=2)
        beta = np.linalg.solve(X.T @ X + 1e-8 * np.eye(X.shape[1]), X.T @ target)
        return ArModel(float(beta[0]), beta[1:], True)
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    return ArModel(float(beta[0]), beta[1:])


def linear_ar_forecast(history, model):
    h = np.asarray(history, dtype=np.float64)
    p = model.order
    if len(h) < p:
        raise DataError(f"need {p} observations of history", "baselines")
    lags = h[::-1][:p]
    return float(model.intercept + lags @ model.coefs)


def ar_residuals(series, model):
    X, target = _design(series, model.order)
    return target - X @ np.concatenate([[model.intercept], model.coefs]), X
