"""Cleaning, scaling, encoding, windowing, splitting and augmentation."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, UsageError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
DATE = "date"

SPLITS = ("train", "val", "test")


@dataclass
class RawTable:
    """Column-oriented table.

    Continuous columns are float arrays with NaN for missing cells,
    categorical columns are object arrays with None for missing cells and
    date columns are ``datetime64[D]`` arrays.
    """

    columns: dict
    kinds: dict

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DataError(f"columns have different lengths {sorted(lengths)}", "preprocess")
        if set(self.columns) != set(self.kinds):
            raise DataError("column kinds do not match column names", "preprocess")

    @property
    def n_rows(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def take(self, rows):
        rows = np.asarray(rows)
        return RawTable({k: v[rows] for k, v in self.columns.items()}, dict(self.kinds))

    def copy(self):
        return RawTable({k: v.copy() for k, v in self.columns.items()}, dict(self.kinds))


def is_missing(column, kind):
    if kind == CONTINUOUS:
        return np.isnan(column.astype(np.float64))
    if kind == DATE:
        return np.isnat(column)
    return np.array([c is None or (isinstance(c, float) and math.isnan(c)) for c in column], dtype=bool)


@dataclass
class ImputeStats:
    means: dict = field(default_factory=dict)
    modes: dict = field(default_factory=dict)


def fit_impute(table, rows=None):
    """Means of continuous columns and modes of categorical ones over ``rows``.

    Mode ties resolve to the label seen first.
    """
    if rows is not None:
        table = table.take(rows)
    stats = ImputeStats()
    for name, kind in table.kinds.items():
        col = table.columns[name]
        present = col[~is_missing(col, kind)]
        if kind == CONTINUOUS:
            stats.means[name] = float(np.mean(present)) if len(present) else math.nan
        elif kind == CATEGORICAL:
            counts = {}
            for label in present:
                counts[label] = counts.get(label, 0) + 1
            stats.modes[name] = max(counts, key=counts.get) if counts else None
    return stats


def impute(table, stats):
    out = table.copy()
    for name, kind in table.kinds.items():
        if kind == DATE:
            continue
        col = out.columns[name]
        miss = is_missing(col, kind)
        if kind == CONTINUOUS:
            if name not in stats.means:
                raise DataError(f"no imputation statistics for column '{name}'", "preprocess")
            if miss.any():
                if math.isnan(stats.means[name]):
                    raise DataError(f"column '{name}' is entirely missing; no mean exists", "preprocess")
                col[miss] = stats.means[name]
        else:
            if name not in stats.modes:
                raise DataError(f"no imputation statistics for column '{name}'", "preprocess")
            if miss.any():
                if stats.modes[name] is None:
                    raise DataError(f"column '{name}' is entirely missing; no mode exists", "preprocess")
                col[miss] = stats.modes[name]
    return out


@dataclass
class ScalerParams:
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - self.mins) / safe, 0.0)

    def inverse(self, x):
        x = np.asarray(x, dtype=np.float64)
        span = self.maxs - self.mins
        return np.where(span > 0, x * span + self.mins, self.mins)

    @property
    def span(self):
        return self.maxs - self.mins


def fit_scaler(x):
    """Min/max per column (last axis) of training data.  Constant columns map to 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot fit a scaler on an empty column", "preprocess")
    if x.ndim == 1:
        return ScalerParams(np.float64(np.nanmin(x)), np.float64(np.nanmax(x)))
    flat = x.reshape(-1, x.shape[-1])
    return ScalerParams(np.nanmin(flat, axis=0), np.nanmax(flat, axis=0))


def transform(x, params):
    return params.transform(x)


def inverse(x, params):
    return params.inverse(x)


UNKNOWN = "<unknown>"


@dataclass
class VocabMap:
    """Label to dense index, with 0 reserved for labels never seen in training."""

    index: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.index) + 1

    def transform(self, labels):
        return np.array([self.index.get(lbl, 0) for lbl in labels], dtype=np.int64)

    def label(self, k):
        for lbl, i in self.index.items():
            if i == k:
                return lbl
        return UNKNOWN

    def to_dict(self):
        return {UNKNOWN: 0, **self.index}


def fit_vocab(labels):
    vocab = VocabMap()
    for lbl in labels:
        if lbl not in vocab.index:
            vocab.index[lbl] = len(vocab.index) + 1
    return vocab


def encode_categories(column):
    """Index labels by first occurrence; returns (indices, vocab)."""
    vocab = fit_vocab(column)
    return vocab.transform(column), vocab


@dataclass
class WindowedDataset:
    """Supervised samples ``x[i] -> y[i]``.

    ``t`` is the target's time index (0-based), ``series`` identifies the
    source series and ``split`` is one of ``train``, ``val``, ``test`` or
    empty before splitting.
    """

    x: np.ndarray
    y: np.ndarray
    contexts: np.ndarray
    states: np.ndarray
    t: np.ndarray
    series: np.ndarray
    split: np.ndarray
    window: int

    def __len__(self):
        return len(self.y)

    def subset(self, mask):
        mask = np.asarray(mask)
        return WindowedDataset(self.x[mask], self.y[mask], self.contexts[mask], self.states[mask],
                               self.t[mask], self.series[mask], self.split[mask], self.window)

    def part(self, name):
        return self.subset(self.split == name)

    @staticmethod
    def concat(parts):
        parts = list(parts)
        if not parts:
            raise DataError("nothing to concatenate", "preprocess")
        return WindowedDataset(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                                 ("x", "y", "contexts", "states", "t", "series", "split")),
                               parts[0].window)


def make_windows(series, window, contexts=None, states=None, series_id=0):
    """Slide a length-``window`` window over ``series``.

    Sample ``i`` holds ``series[i:i+window]`` and target ``series[i+window]``;
    contexts and states are read at the window's last step.
    """
    y = np.asarray(series, dtype=np.float64)
    n = len(y)
    if n < window + 1:
        raise DataError(f"series of length {n} is too short for window {window}", "preprocess")
    m = n - window
    idx = np.arange(m)[:, None] + np.arange(window)[None, :]
    end = np.arange(m) + window - 1
    if contexts is None:
        contexts = np.zeros((n, 0), dtype=np.int64)
    contexts = np.asarray(contexts).reshape(n, -1)
    if states is None:
        states = np.zeros((n, 0))
    states = np.asarray(states, dtype=np.float64).reshape(n, -1)
    return WindowedDataset(
        x=y[idx], y=y[window:].copy(), contexts=contexts[end].astype(np.int64),
        states=states[end].copy(), t=np.arange(window, n), series=np.full(m, series_id),
        split=np.full(m, "", dtype=object), window=window,
    )


@dataclass
class SplitSpec:
    t_train: int
    t_val: int
    length: int
    fractions: tuple = (0.70, 0.15, 0.15)
    dropped: int = 0
    counts: dict = field(default_factory=dict)

    def label(self, t):
        """Split of 0-based time index ``t``."""
        t = np.asarray(t)
        return np.where(t < self.t_train, "train", np.where(t < self.t_val, "val", "test"))

    @property
    def empty_splits(self):
        return [s for s in SPLITS if self.counts.get(s, 0) == 0]


def split_bounds(length, fractions=(0.70, 0.15, 0.15)):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise UsageError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}",
                         "preprocess")
    # the epsilon absorbs representation error such as 0.7 * 10 = 7.000000000000001
    t_train = math.floor(fractions[0] * length + 1e-9)
    t_val = math.floor((fractions[0] + fractions[1]) * length + 1e-9)
    return SplitSpec(t_train, t_val, length, fractions)


def chrono_split(dataset, length, fractions=(0.70, 0.15, 0.15)):
    """Label samples by time; drop those whose window and target straddle a boundary.

    With 1-based time the training split holds steps ``1..floor(f1*T)`` and
    validation ``..floor((f1+f2)*T)``.
    """
    spec = split_bounds(length, fractions)
    first = spec.label(dataset.t - dataset.window)
    last = spec.label(dataset.t)
    keep = first == last
    out = dataset.subset(keep)
    out.split = last[keep].astype(object)
    spec.dropped = int((~keep).sum())
    spec.counts = {s: int((out.split == s).sum()) for s in SPLITS}
    return spec, out


@dataclass
class AugmentConfig:
    sigma: float = 0.05
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise UsageError("augmentation sigma must be nonnegative", "preprocess")
        if not 0 <= self.dropout_rate < 1:
            raise UsageError("supplier dropout rate must lie in [0, 1)", "preprocess")


def augment_gaussian(train, cfg):
    """Append one noisy copy of every training sample.

    Noise is added to the input window (normalized units); targets are kept.
    """
    rng = np.random.default_rng(cfg.seed)
    noisy = replace(train, x=train.x + rng.normal(0.0, 1.0, size=train.x.shape) * cfg.sigma)
    return WindowedDataset.concat([train, noisy])


def drop_supplier_records(table, rate, seed, stats, columns=None):
    """Blank supplier-linked fields of random rows and re-impute them.

    Returns the new table and the boolean mask of dropped rows.
    """
    if not 0 <= rate < 1:
        raise UsageError(f"dropout rate {rate} outside [0, 1)", "preprocess")
    rng = np.random.default_rng(seed)
    dropped = rng.random(table.n_rows) < rate
    if not dropped.any():
        return table.copy(), dropped
    out = table.copy()
    for name in columns or list(table.kinds):
        kind = table.kinds[name]
        if kind == CONTINUOUS:
            out.columns[name][dropped] = np.nan
        elif kind == CATEGORICAL:
            out.columns[name][dropped] = None
    return impute(out, stats), dropped
