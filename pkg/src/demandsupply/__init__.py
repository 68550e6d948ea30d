"""Joint demand forecasting and replenishment optimization.

A small reverse-mode autodiff core drives an embedding + LSTM forecaster and
a decision network trained together under a weighted forecast/supply loss,
alongside classical baselines, a replay simulator and an experiment harness.
"""

from .errors import ArtifactError, DataError, NumericError, UsageError

__version__ = "0.1.0"

__all__ = ["ArtifactError", "DataError", "NumericError", "UsageError", "__version__"]
