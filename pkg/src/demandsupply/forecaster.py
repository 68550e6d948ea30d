"""Demand forecaster: embeddings, a stacked recurrent encoder and a dense head.

Parameters live in a flat ``dict`` of float64 arrays keyed by name, e.g.
``emb.0``, ``rnn0.W``, ``dense.W``.  Every forward pass registers them on
the active tape.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import DataError, NumericError, ShapeMismatch, UsageError

GATES = {"lstm": 4, "gru": 3, "rnn": 1}
CHECKPOINT_FORMAT = "demandsupply-params-v1"


@dataclass
class ForecasterConfig:
    window: int = 30
    vocab_sizes: tuple = ()
    embed_dim: int = 32
    hidden: tuple = (128, 64)
    dense: int = 32
    recurrent_dropout: float = 0.2
    dropout: float = 0.2
    cell: str = "lstm"
    stochastic: bool = False
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.cell not in GATES:
            raise UsageError(f"unknown cell '{self.cell}', expected one of {sorted(GATES)}", "forecaster")
        self.vocab_sizes = tuple(int(v) for v in self.vocab_sizes)
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def context_width(self):
        return len(self.vocab_sizes) * self.embed_dim


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_forecaster(cfg, rng):
    """Uniform(+-1/sqrt(fan_in)) weights; LSTM forget-gate bias set to ``cfg.forget_bias``."""
    params = {}
    for j, size in enumerate(cfg.vocab_sizes):
        params[f"emb.{j}"] = _uniform(rng, size, (size, cfg.embed_dim))
    n_in = 1 + cfg.context_width
    for k, h in enumerate(cfg.hidden):
        g = GATES[cfg.cell]
        params[f"rnn{k}.W"] = _uniform(rng, n_in + h, (n_in + h, g * h))
        b = np.zeros(g * h)
        if cfg.cell == "lstm":
            b[h:2 * h] = cfg.forget_bias
        params[f"rnn{k}.b"] = b
        n_in = h
    params["dense.W"] = _uniform(rng, n_in, (n_in, cfg.dense))
    params["dense.b"] = np.zeros(cfg.dense)
    params["head.W"] = _uniform(rng, cfg.dense, (cfg.dense, 1))
    params["head.b"] = np.zeros(1)
    if cfg.stochastic:
        params["sigma.W"] = _uniform(rng, cfg.dense, (cfg.dense, 1))
        params["sigma.b"] = np.full(1, -3.0)
    return params


def parameter_count(params):
    return int(sum(p.size for p in params.values()))


@dataclass
class CellWeights:
    """Tape views of one recurrent layer: input block, hidden block, bias."""

    w_x: ad.Tensor
    w_h: ad.Tensor
    b: ad.Tensor
    hidden: int


def cell_weights(tape, params, k, n_in):
    w = tape.param(f"rnn{k}.W", params[f"rnn{k}.W"])
    hidden = params[f"rnn{k}.W"].shape[0] - n_in
    if hidden <= 0:
        raise ShapeMismatch(f"rnn{k}", f"({n_in}+hidden, *)", params[f"rnn{k}.W"].shape)
    w_x = ad.slice_(w, (slice(0, n_in), slice(None)))
    w_h = ad.slice_(w, (slice(n_in, None), slice(None)))
    return CellWeights(w_x, w_h, tape.param(f"rnn{k}.b", params[f"rnn{k}.b"]), hidden)


def _check(x, h, layer):
    if x.shape[-1] != layer.w_x.shape[0]:
        raise ShapeMismatch("cell input", layer.w_x.shape[0], x.shape[-1])
    if h.shape[-1] != layer.hidden:
        raise ShapeMismatch("cell hidden state", layer.hidden, h.shape[-1])


def _lstm(pre, h, c, layer, hh):
    n = layer.hidden
    z = ad.add(ad.add(pre, ad.matmul(hh, layer.w_h)), layer.b)
    gates = ad.sigmoid(ad.slice_(z, (slice(None), slice(0, 3 * n))))
    i = ad.slice_(gates, (slice(None), slice(0, n)))
    f = ad.slice_(gates, (slice(None), slice(n, 2 * n)))
    o = ad.slice_(gates, (slice(None), slice(2 * n, 3 * n)))
    g = ad.tanh(ad.slice_(z, (slice(None), slice(3 * n, 4 * n))))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    return ad.mul(o, ad.tanh(c_new)), c_new


def _rnn(pre, h, layer, hh):
    return ad.relu(ad.add(ad.add(pre, ad.matmul(hh, layer.w_h)), layer.b))


def _gru(pre, h, layer, hh):
    n = layer.hidden
    xz = ad.add(pre, layer.b)
    w_h_zr = ad.slice_(layer.w_h, (slice(None), slice(0, 2 * n)))
    w_h_n = ad.slice_(layer.w_h, (slice(None), slice(2 * n, 3 * n)))
    zr = ad.sigmoid(ad.add(ad.slice_(xz, (slice(None), slice(0, 2 * n))), ad.matmul(hh, w_h_zr)))
    z = ad.slice_(zr, (slice(None), slice(0, n)))
    r = ad.slice_(zr, (slice(None), slice(n, 2 * n)))
    cand = ad.tanh(ad.add(ad.slice_(xz, (slice(None), slice(2 * n, 3 * n))), ad.matmul(ad.mul(r, hh), w_h_n)))
    return ad.add(ad.mul(ad.add(ad.scale(z, -1.0), 1.0), cand), ad.mul(z, h))


def lstm_step(x, h, c, layer, h_in=None):
    """One LSTM step with gate order (input, forget, output, candidate).

    i, f, o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
    ``h_in`` optionally replaces ``h`` inside the gate affine map (recurrent
    dropout).
    """
    _check(x, h, layer)
    return _lstm(ad.matmul(x, layer.w_x), h, c, layer, h if h_in is None else h_in)


def rnn_step(x, h, layer, h_in=None):
    """Plain recurrent update h' = relu(W_x x + W_h h + b)."""
    _check(x, h, layer)
    return _rnn(ad.matmul(x, layer.w_x), h, layer, h if h_in is None else h_in)


def gru_step(x, h, layer, h_in=None):
    """GRU step with gate order (update, reset, candidate).

    n = tanh(W_x x + W_h (r * h) + b_n);  h' = (1 - z) * n + z * h.
    """
    _check(x, h, layer)
    return _gru(ad.matmul(x, layer.w_x), h, layer, h if h_in is None else h_in)


def _cell(kind, pre, h, c, layer, h_in):
    hh = h if h_in is None else h_in
    if kind == "lstm":
        return _lstm(pre, h, c, layer, hh)
    if kind == "gru":
        return _gru(pre, h, layer, hh), c
    return _rnn(pre, h, layer, hh), c


def embed(tape, params, contexts, vocab_sizes):
    """Concatenated embedding rows, computed as one-hot times table."""
    contexts = np.asarray(contexts, dtype=np.int64)
    if contexts.ndim == 1:
        contexts = contexts[:, None]
    if contexts.shape[1] != len(vocab_sizes):
        raise ShapeMismatch("embed", len(vocab_sizes), contexts.shape[1])
    parts = []
    for j, size in enumerate(vocab_sizes):
        idx = contexts[:, j]
        if np.any(idx < 0) or np.any(idx >= size):
            raise DataError(f"context index out of range for feature {j} (vocabulary {size})", "forecaster")
        onehot = np.zeros((len(idx), size))
        onehot[np.arange(len(idx)), idx] = 1.0
        parts.append(ad.matmul(tape.constant(onehot), tape.param(f"emb.{j}", params[f"emb.{j}"])))
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)


@dataclass
class ForecastDistribution:
    mu: ad.Tensor
    sigma: ad.Tensor = None


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def forward(params, cfg, x, contexts=None, train=False, rng=None):
    """Run a batch of windows through the network on the active tape.

    ``x`` is (batch, window) in normalized units and ``contexts`` is
    (batch, n_features) of vocabulary indices.  Dropout masks are drawn from
    ``rng`` only when ``train`` is true.
    """
    tape = ad.active_tape()
    if tape is None:
        raise ad.NoActiveTape("forecaster.forward")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != cfg.window:
        raise DataError(f"window length {x.shape[1]} does not match configured {cfg.window}", "forecaster")
    batch = x.shape[0]
    if contexts is None:
        contexts = np.zeros((batch, 0), dtype=np.int64)
    emb = embed(tape, params, contexts, cfg.vocab_sizes) if cfg.vocab_sizes else None
    if train and rng is None:
        raise UsageError("training mode needs a random generator for dropout", "forecaster")

    n_in = 1 + cfg.context_width
    layer = cell_weights(tape, params, 0, n_in)
    # the context is identical at every step, so its projection is computed once
    w_step = ad.slice_(layer.w_x, (slice(0, 1), slice(None)))
    ctx_proj = ad.matmul(emb, ad.slice_(layer.w_x, (slice(1, None), slice(None)))) if emb is not None else None
    inputs = None
    outputs = []
    n_layers = len(cfg.hidden)
    for k in range(n_layers):
        if k > 0:
            layer = cell_weights(tape, params, k, cfg.hidden[k - 1])
        h = tape.constant(np.zeros((batch, layer.hidden)))
        c = h
        mask = None
        if train and k == 0 and cfg.recurrent_dropout > 0:
            mask = tape.constant(_dropout_mask(rng, (batch, layer.hidden), cfg.recurrent_dropout))
        outputs = []
        for step in range(cfg.window):
            h_in = ad.mul(h, mask) if mask is not None else None
            if k == 0:
                xk = tape.constant(x[:, step:step + 1])
                pre = ad.matmul(xk, w_step)
                if ctx_proj is not None:
                    pre = ad.add(pre, ctx_proj)
            else:
                pre = ad.matmul(inputs[step], layer.w_x)
            h, c = _cell(cfg.cell, pre, h, c, layer, h_in)
            outputs.append(h)
        inputs = outputs
    last = outputs[-1]
    if train and cfg.dropout > 0 and n_layers > 1:
        last = ad.mul(last, tape.constant(_dropout_mask(rng, last.shape, cfg.dropout)))
    dense = ad.relu(ad.add(ad.matmul(last, tape.param("dense.W", params["dense.W"])),
                           tape.param("dense.b", params["dense.b"])))
    mu = ad.add(ad.matmul(dense, tape.param("head.W", params["head.W"])), tape.param("head.b", params["head.b"]))
    sigma = None
    if cfg.stochastic:
        sigma = ad.softplus(ad.add(ad.matmul(dense, tape.param("sigma.W", params["sigma.W"])),
                                   tape.param("sigma.b", params["sigma.b"])))
    return ForecastDistribution(mu, sigma)


def forecast_loss(targets, predictions):
    """Mean squared error; ``targets`` may be an array, ``predictions`` a tensor."""
    n = predictions.value.size if isinstance(predictions, ad.Tensor) else np.size(predictions)
    if n == 0:
        raise DataError("empty batch", "forecaster")
    tape = ad.active_tape()
    if not isinstance(predictions, ad.Tensor):
        predictions = tape.constant(np.asarray(predictions, dtype=np.float64))
    if not isinstance(targets, ad.Tensor):
        targets = tape.constant(np.asarray(targets, dtype=np.float64).reshape(predictions.shape))
    if targets.shape != predictions.shape:
        raise ShapeMismatch("forecast_loss", predictions.shape, targets.shape)
    return ad.mean(ad.square(ad.sub(targets, predictions)))


def sample_forecast(dist, rng):
    """Reparameterized draw mu + sigma * z; returns mu itself when sigma is absent."""
    if dist.sigma is None:
        return dist.mu
    z = rng.standard_normal(dist.mu.shape)
    return ad.add(dist.mu, ad.mul(dist.sigma, z))


def predict(params, cfg, x, contexts=None, batch_size=512):
    """Point forecasts (normalized units) in eval mode, as a 1-d array."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for start in range(0, len(x), batch_size):
        ctx = None if contexts is None else np.asarray(contexts)[start:start + batch_size]
        with Tape():
            dist = forward(params, cfg, x[start:start + batch_size], ctx)
        out.append(dist.mu.value[:, 0])
    if not out:
        return np.zeros(0)
    res = np.concatenate(out)
    if not np.all(np.isfinite(res)):
        raise NumericError("forecaster produced non-finite output", "forecaster")
    return res


def save_params(path, params, meta=None):
    """Write a key to array map; shapes and dtypes round-trip exactly."""
    arrays = {f"p/{k}": v for k, v in params.items()}
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    if meta:
        import json
        arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path):
    import json
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["__format__"]) if "__format__" in data else None
        if fmt != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: unsupported checkpoint format {fmt!r}", "forecaster")
        params = {k[2:]: data[k].copy() for k in data.files if k.startswith("p/")}
        meta = json.loads(str(data["__meta__"])) if "__meta__" in data else {}
    return params, meta
