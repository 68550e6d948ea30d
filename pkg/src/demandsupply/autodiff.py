"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation executed while it is active.  Calling
:meth:`Tape.backward` walks the records in reverse and returns gradients for
every leaf that requires them.  The vocabulary of operations is closed so each
one can be gradient-checked exhaustively::

    with Tape() as tape:
        w = tape.leaf(np.ones((2, 1)))
        loss = mean(square(matmul(x, w)))
    grads = tape.backward(loss)
    grads[w.node]

All values are float64.  relu and hinge use a subgradient of 0 at the kink.
"""

import threading

import numpy as np

from .errors import NumericError, ShapeMismatch

_state = threading.local()


class NoActiveTape(NumericError):
    def __init__(self, op):
        super().__init__(f"cannot record '{op}' outside an active tape", "autodiff")


class NonDifferentiablePoint(NumericError):
    pass


def active_tape():
    stack = getattr(_state, "stack", None)
    if not stack:
        return None
    return stack[-1]


class Tensor:
    """A float64 array attached to one node of a tape."""

    __slots__ = ("value", "node", "tape", "requires_grad")

    def __init__(self, value, node=None, tape=None, requires_grad=False):
        self.value = value
        self.node = node
        self.tape = tape
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, node={self.node})"

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else None

    def numpy(self):
        return self.value

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add(self, -float(other))
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a python scalar is supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


class _Record:
    __slots__ = ("kind", "inputs", "output", "saved", "attrs")

    def __init__(self, kind, inputs, output, saved, attrs):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.saved = saved
        self.attrs = attrs


class Tape:
    """Ordered operation log plus the values of every node.

    Node ids are assigned in creation order, so every record's inputs precede
    its output and a reverse sweep is a valid topological order.
    """

    def __init__(self):
        self.records = []
        self.values = []
        self.requires = []
        self._leaves = []
        self._named = {}

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def _new_node(self, value, requires_grad):
        self.values.append(value)
        self.requires.append(requires_grad)
        return len(self.values) - 1

    def leaf(self, value, requires_grad=True, name=None):
        """Register an input array.  Named leaves are registered once per tape."""
        if name is not None and name in self._named:
            return self._named[name]
        arr = np.array(value, dtype=np.float64)
        node = self._new_node(arr, requires_grad)
        t = Tensor(arr, node, self, requires_grad)
        if requires_grad:
            self._leaves.append(node)
        if name is not None:
            self._named[name] = t
        return t

    def constant(self, value):
        return self.leaf(value, requires_grad=False)

    def param(self, name, value):
        return self.leaf(value, requires_grad=True, name=name)

    def bind(self, name, tensor):
        """Make ``param(name, ...)`` return an existing leaf of this tape."""
        if tensor.tape is not self:
            raise NumericError(f"cannot bind '{name}': tensor belongs to another tape", "autodiff")
        self._named[name] = tensor
        return tensor

    def named(self):
        return dict(self._named)

    def detach(self, t):
        """A copy of ``t`` that blocks gradient flow."""
        return self.leaf(t.value, requires_grad=False)

    def record(self, kind, inputs, **attrs):
        return record(kind, inputs, **attrs)

    def backward(self, loss):
        """Gradients of the scalar ``loss`` for every gradient-requiring leaf.

        Leaves not reachable from the loss get exact zeros.  Fan-out is
        accumulated additively.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self or loss.node is None:
            raise NumericError("loss is not a node of this tape", "autodiff")
        if loss.value.size != 1:
            raise NumericError(f"loss must be scalar, got shape {loss.value.shape}", "autodiff")
        grads = {loss.node: np.ones_like(self.values[loss.node])}
        for rec in reversed(self.records):
            g = grads.get(rec.output)
            if g is None:
                continue
            in_vals = [self.values[i] for i in rec.inputs]
            needs = [self.requires[i] for i in rec.inputs]
            in_grads = _OPS[rec.kind][1](g, in_vals, self.values[rec.output], rec.saved, needs, **rec.attrs)
            for node, need, ig in zip(rec.inputs, needs, in_grads):
                if not need or ig is None:
                    continue
                prev = grads.get(node)
                if prev is None:
                    grads[node] = np.array(ig, dtype=np.float64)
                else:
                    grads[node] = prev + ig
        out = {}
        for node in self._leaves:
            g = grads.get(node)
            out[node] = g if g is not None else np.zeros_like(self.values[node])
        return out

    def grads_by_name(self, grads):
        return {name: grads[t.node] for name, t in self._named.items() if t.requires_grad}

    def replay(self):
        """Recompute every recorded output from the leaf values."""
        values = list(self.values)
        for rec in self.records:
            out, _ = _OPS[rec.kind][0]([values[i] for i in rec.inputs], **rec.attrs)
            values[rec.output] = out
        return values


def _as_tensor(x, tape=None):
    if isinstance(x, Tensor):
        return x
    tape = tape or active_tape()
    if tape is None:
        raise NoActiveTape("constant")
    return tape.constant(x)


def record(kind, inputs, **attrs):
    """Run op ``kind`` on ``inputs`` and log it on the active tape."""
    tape = active_tape()
    if tape is None:
        raise NoActiveTape(kind)
    if kind not in _OPS:
        raise NumericError(f"unknown op '{kind}'", "autodiff")
    inputs = [_as_tensor(x, tape) for x in inputs]
    for t in inputs:
        if t.tape is not tape:
            raise NumericError(f"{kind}: input belongs to a different tape", "autodiff")
    value, saved = _OPS[kind][0]([t.value for t in inputs], **attrs)
    req = any(t.requires_grad for t in inputs)
    node = tape._new_node(value, req)
    tape.records.append(_Record(kind, [t.node for t in inputs], node, saved, attrs))
    return Tensor(value, node, tape, req)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# forward functions take (values, **attrs) and return (out, saved);
# backward functions take (g, input values, out, saved, needs, **attrs).

def _matmul_f(v):
    a, b = v
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch("matmul", "two 2-d operands", (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", (a.shape[1], "*"), b.shape)
    return a @ b, None


def _matmul_b(g, v, out, saved, needs):
    a, b = v
    return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


def _add_f(v):
    a, b = v
    _broadcast_check("add", a, b)
    return a + b, None


def _add_b(g, v, out, saved, needs):
    return (_unbroadcast(g, v[0].shape) if needs[0] else None,
            _unbroadcast(g, v[1].shape) if needs[1] else None)


def _mul_f(v):
    a, b = v
    _broadcast_check("elementwise-mul", a, b)
    return a * b, None


def _mul_b(g, v, out, saved, needs):
    a, b = v
    return (_unbroadcast(g * b, a.shape) if needs[0] else None,
            _unbroadcast(g * a, b.shape) if needs[1] else None)


def _tanh_f(v):
    return np.tanh(v[0]), None


def _tanh_b(g, v, out, saved, needs):
    return (g * (1.0 - out * out),)


def _sigmoid_f(v):
    x = v[0]
    # split by sign for overflow-free evaluation
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out, None


def _sigmoid_b(g, v, out, saved, needs):
    return (g * out * (1.0 - out),)


def _relu_f(v):
    return np.maximum(v[0], 0.0), None


def _relu_b(g, v, out, saved, needs):
    return (g * (v[0] > 0.0),)


def _softplus_f(v):
    return np.logaddexp(0.0, v[0]), None


def _softplus_b(g, v, out, saved, needs):
    s, _ = _sigmoid_f(v)
    return (g * s,)


def _concat_f(v, axis=-1):
    try:
        out = np.concatenate(v, axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", [x.shape for x in v], f"matching extents off axis {axis}") from None
    sizes = [x.shape[axis] for x in v]
    return out, sizes


def _concat_b(g, v, out, sizes, needs, axis=-1):
    splits = np.cumsum(sizes)[:-1]
    parts = np.split(g, splits, axis=axis)
    return tuple(p if n else None for p, n in zip(parts, needs))


def _slice_f(v, key=None):
    out = v[0][key]
    return np.array(out, dtype=np.float64), None


def _slice_b(g, v, out, saved, needs, key=None):
    full = np.zeros_like(v[0])
    full[key] = g
    return (full,)


def _mean_f(v, axis=None, keepdims=False):
    return np.asarray(np.mean(v[0], axis=axis, keepdims=keepdims), dtype=np.float64), None


def _mean_b(g, v, out, saved, needs, axis=None, keepdims=False):
    x = v[0]
    if axis is None:
        n = x.size
        return (np.broadcast_to(g, x.shape) / n,) if keepdims else (np.full_like(x, float(np.sum(g)) / n),)
    n = x.shape[axis]
    if not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape) / n,)


def _square_f(v):
    return v[0] * v[0], None


def _square_b(g, v, out, saved, needs):
    return (2.0 * v[0] * g,)


def _scale_f(v, c=1.0):
    return v[0] * c, None


def _scale_b(g, v, out, saved, needs, c=1.0):
    return (g * c,)


def _softmax_f(v):
    x = v[0]
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True), None


def _softmax_b(g, v, out, saved, needs):
    dot = np.sum(g * out, axis=-1, keepdims=True)
    return (out * (g - dot),)


_OPS = {
    "matmul": (_matmul_f, _matmul_b),
    "add": (_add_f, _add_b),
    "elementwise-mul": (_mul_f, _mul_b),
    "tanh": (_tanh_f, _tanh_b),
    "sigmoid": (_sigmoid_f, _sigmoid_b),
    "relu": (_relu_f, _relu_b),
    "softplus": (_softplus_f, _softplus_b),
    "concat": (_concat_f, _concat_b),
    "slice": (_slice_f, _slice_b),
    "mean": (_mean_f, _mean_b),
    "square": (_square_f, _square_b),
    "scale": (_scale_f, _scale_b),
    "hinge": (_relu_f, _relu_b),
    "softmax": (_softmax_f, _softmax_b),
}

OP_KINDS = tuple(_OPS)
KINKED = ("relu", "hinge")


def matmul(a, b):
    return record("matmul", [a, b])


def add(a, b):
    return record("add", [a, b])


def mul(a, b):
    return record("elementwise-mul", [a, b])


def tanh(x):
    return record("tanh", [x])


def sigmoid(x):
    return record("sigmoid", [x])


def relu(x):
    return record("relu", [x])


def softplus(x):
    return record("softplus", [x])


def hinge(x):
    """max(0, x); used for constraint violations."""
    return record("hinge", [x])


def concat(xs, axis=-1):
    return record("concat", list(xs), axis=axis)


def slice_(x, key):
    return record("slice", [x], key=key)


def mean(x, axis=None, keepdims=False):
    return record("mean", [x], axis=axis, keepdims=keepdims)


def square(x):
    return record("square", [x])


def scale(x, c):
    return record("scale", [x], c=float(c))


def softmax(x):
    """Softmax over the last axis."""
    return record("softmax", [x])


def sub(a, b):
    return add(a, scale(_as_tensor(b), -1.0))


def detach(x):
    tape = x.tape if isinstance(x, Tensor) else active_tape()
    if tape is None:
        raise NoActiveTape("detach")
    return tape.detach(_as_tensor(x, tape))


def value_of(fn, arrays):
    """Evaluate ``fn`` on fresh leaves and return the float result."""
    with Tape() as tape:
        leaves = [tape.leaf(a) for a in arrays]
        out = fn(*leaves)
    return float(out.value.reshape(-1)[0]), tape


def _near_kink(tape, step):
    for rec in tape.records:
        if rec.kind in KINKED and tape.requires[rec.inputs[0]]:
            if np.any(np.abs(tape.values[rec.inputs[0]]) <= step):
                return True
    return False


def grad_check(fn, params, step=1e-5):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps leaf tensors (one per array in ``params``) to a scalar tensor.
    The error per entry is ``|a - n| / max(1, |a|, |n|)``.  Points where a
    relu/hinge input lies within ``step`` of its kink are rejected with
    :class:`NonDifferentiablePoint`, because central differences straddle the
    kink there.
    """
    if step <= 0:
        raise NumericError("step must be positive", "autodiff")
    params = [np.array(p, dtype=np.float64) for p in params]
    with Tape() as tape:
        leaves = [tape.leaf(p) for p in params]
        out = fn(*leaves)
    if _near_kink(tape, step):
        raise NonDifferentiablePoint("a relu/hinge input lies at its kink; pick another point", "autodiff")
    grads = tape.backward(out)
    worst = 0.0
    for k, p in enumerate(params):
        analytic = grads[leaves[k].node]
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp, _ = value_of(fn, params)
            flat[i] = orig - step
            fm, _ = value_of(fn, params)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite value at perturbed entry {i} of parameter {k}", "autodiff")
            numeric = (fp - fm) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
