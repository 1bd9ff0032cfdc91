"""A small reverse-mode differentiation engine over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes its
gradient back into them. :meth:`Tensor.backward` walks the graph in reverse
topological order. Only the operations the translation model needs are
provided; the sequence-model primitives (LSTM update, attention scores,
masked softmax, maxout, softmax cross-entropy) are fused single nodes with
hand-written adjoints backed by :mod:`attnseg.numerics.kernels`.
"""

import contextlib

import numpy as np

from . import kernels

PROB_FLOOR = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (extraction, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def _accum_at(self, index, g):
        if self.grad is None:
            self.grad = np.zeros(self.data.shape)
        self.grad[index] += g

    def backward(self, grad=None):
        """Populate ``.grad`` on every differentiable ancestor of this tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed once pushed upstream
                if node._parents:
                    node.grad = None

    # operator sugar used by tests and small compositions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return affine(self, other)

    def __getitem__(self, index):
        return index_select(self, index)


def _topological(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: a._accum(-g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def tanh(a):
    out_data = np.tanh(a.data)
    return _node(out_data, (a,), lambda g: a._accum(g * (1.0 - out_data * out_data)))


def sigmoid(a):
    out_data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out_data, (a,), lambda g: a._accum(g * out_data * (1.0 - out_data)))


def exp(a):
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: a._accum(g * out_data))


def log(a):
    return _node(np.log(a.data), (a,), lambda g: a._accum(g / a.data))


def total(a):
    """Sum of all entries, as a 0-d tensor."""
    shape = a.shape
    return _node(a.data.sum(), (a,), lambda g: a._accum(np.broadcast_to(g, shape)))


def scale(a, factor):
    """Multiply by a python/numpy constant."""
    return _node(a.data * factor, (a,), lambda g: a._accum(g * factor))


def index_select(a, index):
    """Basic (slice/integer) indexing."""
    return _node(a.data[index], (a,), lambda g: a._accum_at(index, g))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accum(np.take(g, np.arange(lo, hi), axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors, axis=1):
    tensors = list(tensors)

    def backward(g):
        for k, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, k, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def sum_list(tensors):
    """Sum of all entries of all tensors (scalar)."""
    tensors = list(tensors)

    def backward(g):
        for t in tensors:
            if t.requires_grad:
                t._accum(np.full(t.shape, float(g)))

    value = 0.0
    for t in tensors:
        value += t.data.sum()
    return _node(np.asarray(value), tensors, backward)


def embed(table, ids):
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        flat = ids.reshape(-1)
        onehot = np.zeros((flat.size, table.shape[0]))
        onehot[np.arange(flat.size), flat] = 1.0
        table._accum(onehot.T @ g.reshape(-1, table.shape[1]))

    return _node(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# affine maps
# ---------------------------------------------------------------------------


def affine(x, W, b=None):
    """``x @ W (+ b)`` for ``x`` of shape (..., d) and ``W`` of shape (d, k)."""
    x, W = as_tensor(x), as_tensor(W)
    out = x.data @ W.data
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        if x.requires_grad:
            x._accum(g @ W.data.T)
        if W.requires_grad:
            d = x.shape[-1]
            W._accum(x.data.reshape(-1, d).T @ g.reshape(-1, g.shape[-1]))
        if b is not None and b.requires_grad:
            b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _node(out, parents, backward)


def affine_sum(pairs, b=None, base=None):
    """``sum_k x_k @ W_k (+ b) (+ base)`` as one node.

    Avoids materialising the concatenation of the inputs in the recurrent
    loops; mathematically identical to ``affine(concat(xs), vstack(Ws), b)``.
    """
    pairs = [(as_tensor(x), as_tensor(W)) for x, W in pairs]
    out = pairs[0][0].data @ pairs[0][1].data
    for x, W in pairs[1:]:
        out = out + x.data @ W.data
    if b is not None:
        out = out + b.data
    if base is not None:
        out = out + base.data
    parents = [t for pair in pairs for t in pair]
    if b is not None:
        parents.append(b)
    if base is not None:
        parents.append(base)

    def backward(g):
        for x, W in pairs:
            if x.requires_grad:
                x._accum(g @ W.data.T)
            if W.requires_grad:
                W._accum(x.data.T @ g)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=0))
        if base is not None and base.requires_grad:
            base._accum(g)

    return _node(out, parents, backward)


# ---------------------------------------------------------------------------
# fused sequence-model primitives
# ---------------------------------------------------------------------------


def lstm_update(z, c_prev, h_prev, mask=None):
    """Gate nonlinearities and state update of a single-forget-gate LSTM.

    ``z`` holds the pre-activations ``[i, f, o, g]`` (B, 4n). Rows whose
    ``mask`` entry is 0 pass the previous state through, which is how padded
    positions are skipped. Returns ``(h, c)``.
    """
    B, n = c_prev.shape
    m = np.ones(B) if mask is None else np.ascontiguousarray(mask, dtype=np.float64)
    h, c, act, tanh_c = kernels.get("lstm_forward")(z.data, c_prev.data, h_prev.data, m)
    packed = np.stack([h, c], axis=1)

    def backward(g):
        dz, dc_prev, dh_prev = kernels.get("lstm_backward")(
            np.ascontiguousarray(g[:, 0]), np.ascontiguousarray(g[:, 1]),
            act, tanh_c, c_prev.data, m,
        )
        if z.requires_grad:
            z._accum(dz)
        if c_prev.requires_grad:
            c_prev._accum(dc_prev)
        if h_prev.requires_grad:
            h_prev._accum(dh_prev)

    node = _node(packed, (z, c_prev, h_prev), backward)
    return _half(node, 0), _half(node, 1)


def _half(packed, k):
    def backward(g):
        packed._accum_at((slice(None), k), g)

    return _node(np.ascontiguousarray(packed.data[:, k]), (packed,), backward)


def lstm_cell(x, h, c, W, U, b, mask=None):
    """Standard LSTM cell: gates from ``x @ W + h @ U + b``."""
    z = affine_sum([(x, W), (h, U)], b)
    return lstm_update(z, c, h, mask)


def attention_scores(keys, query, v):
    """``e[b, i] = v . tanh(keys[b, i] + query[b])`` (keys already projected)."""
    e, t = kernels.get("attention_scores")(keys.data, query.data, v.data)

    def backward(g):
        dkeys, dquery, dv = kernels.get("attention_scores_backward")(
            np.ascontiguousarray(g), t, v.data
        )
        if keys.requires_grad:
            keys._accum(dkeys)
        if query.requires_grad:
            query._accum(dquery)
        if v.requires_grad:
            v._accum(dv)

    return _node(e, (keys, query, v), backward)


def masked_softmax(e, mask, temperature=1.0):
    """Row softmax of ``e / temperature`` over unmasked columns."""
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    if np.any(mask.sum(axis=1) == 0):
        raise ValueError("every position of a row is masked")
    p = kernels.get("masked_softmax")(e.data, mask, float(temperature))

    def backward(g):
        e._accum(kernels.get("masked_softmax_backward")(np.ascontiguousarray(g), p, float(temperature)))

    return _node(p, (e,), backward)


def weighted_sum(weights, states):
    """Context vectors ``c[b] = sum_i weights[b, i] * states[b, i]``."""
    out = np.einsum("ba,bad->bd", weights.data, states.data)

    def backward(g):
        if weights.requires_grad:
            weights._accum(np.einsum("bd,bad->ba", g, states.data))
        if states.requires_grad:
            states._accum(weights.data[:, :, None] * g[:, None, :])

    return _node(out, (weights, states), backward)


def maxout(z):
    """Maxout with pool size 2 over adjacent columns."""
    out, second = kernels.get("maxout")(z.data)

    def backward(g):
        z._accum(kernels.get("maxout_backward")(np.ascontiguousarray(g), second))

    return _node(out, (z,), backward)


def softmax_cross_entropy(logits, targets, weights=None, floor=PROB_FLOOR):
    """Per-row ``-log p[target]`` with ``p = softmax(logits)``, scaled by ``weights``.

    Probabilities below ``floor`` are clamped inside the log (and then carry
    no gradient). Returns a (B,) tensor; the softmax is kept on
    ``.probs`` of the returned tensor for inspection.
    """
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    w = np.ones(len(targets)) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    loss, p = kernels.get("softmax_xent")(logits.data, targets, w, floor)

    def backward(g):
        logits._accum(kernels.get("softmax_xent_backward")(np.ascontiguousarray(g), p, targets, w, floor))

    out = _node(loss, (logits,), backward)
    return out, p
