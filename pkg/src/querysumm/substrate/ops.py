"""Differentiable elementary operations on :class:`Tensor`.

Every op returns a new node whose backward closure maps the output gradient to
one gradient per input. Broadcasting follows numpy; gradients are summed back
to each input's shape.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import NonFiniteError, ShapeError, as_tensor, make_node

LN_VAR_FLOOR = 1e-12
CE_CLAMP = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                                _unbroadcast(g, b.shape) if b.requires_grad else None), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                                _unbroadcast(-g, b.shape) if b.requires_grad else None), "sub")


def mul(a, b):
    """Elementwise product; a python float for `b` acts as a scale."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None), "mul")


def scale(a, c):
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NonFiniteError("div: division by zero")
    out = a.data / b.data
    return make_node(out, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.shape),
                                _unbroadcast(-g * out / b.data, b.shape)), "div")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 or b.ndim == 1:
        a2 = reshape(a, (1, -1)) if a.ndim == 1 else a
        b2 = reshape(b, (-1, 1)) if b.ndim == 1 else b
        out = matmul(a2, b2)
        shape = out.shape
        if a.ndim == 1:
            shape = shape[:-2] + shape[-1:]
        if b.ndim == 1:
            shape = shape[:-1]
        return reshape(out, shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}: inner dims {a.shape[-1]} != {b.shape[-2]}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data @ b.data, (a, b), bw, "matmul")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return make_node(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    a = as_tensor(a)
    return make_node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat(axis={axis}): {tensors[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return make_node(out, tensors, bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        ax = axis if axis >= 0 else len(shape) + 1 + axis
        shape.insert(ax, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def getitem(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_node(out, (a,), bw, "getitem")


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    oshape = np.shape(out)

    def bw(g):
        g = g.reshape(oshape)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis, keepdims), 1.0 / n)


def exp(a):
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError in make_node
        out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if np.any(a.data <= 0):
        raise NonFiniteError("log: non-positive input")
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    if np.any(a.data < 0):
        raise NonFiniteError("sqrt: negative input")
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a):
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def gelu(a):
    """tanh approximation of GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_node(out, (a,), bw, "gelu")


def _softmax_np(x, axis, mask):
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ShapeError("softmax: a row is fully masked")
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis=-1, mask=None):
    """Softmax along `axis`; `mask` (bool, broadcastable) marks allowed entries."""
    a = as_tensor(a)
    out = _softmax_np(a.data, axis, mask)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), bw, "softmax")


def log_softmax(a, axis=-1):
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    out = x - lse
    sm = np.exp(out)
    return make_node(out, (a,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),), "log_softmax")


def layer_norm(x, gamma=None, beta=None):
    """Normalize over the last axis; zero-variance rows map to zero."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    clamped = var < LN_VAR_FLOOR
    s = np.sqrt(np.maximum(var, LN_VAR_FLOOR))
    xhat = np.where(clamped, 0.0, xc / s)

    def bw_x(g):
        gh = g.mean(axis=-1, keepdims=True)
        ghx = (g * xhat).mean(axis=-1, keepdims=True)
        return np.where(clamped, 0.0, (g - gh - xhat * ghx) / s)

    norm = make_node(xhat, (x,), lambda g: (bw_x(g),), "layer_norm")
    if gamma is not None:
        norm = mul(norm, gamma)
    if beta is not None:
        norm = add(norm, beta)
    return norm


def embedding(ids, table):
    """Row gather `table[ids]`; numerically identical to one_hot(ids) @ table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table of {table.shape[0]} rows")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return make_node(table.data[ids], (table,), bw, "embedding")


def one_hot(ids, n):
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros(ids.shape + (n,))
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


def embed_one_hot(onehot, table):
    """Differentiable embedding lookup as a (.., vs) x (vs, d) product."""
    return matmul(onehot, table)


def where_const(mask, a, value):
    """Entries where `mask` is False are replaced by the constant `value`."""
    mask = np.broadcast_to(mask, a.shape)
    return make_node(np.where(mask, a.data, value), (a,), lambda g: (g * mask,), "where_const")


def straight_through(hard, soft):
    """Forward value is `hard` exactly; the gradient passes to `soft` unchanged."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: {hard.shape} vs {soft.shape}")
    return make_node(hard, (soft,), lambda g: (g,), "straight_through")


def cross_entropy_soft(target, pred, axis=-1):
    """-sum(target * log(max(pred, eps))) along `axis`."""
    target, pred = as_tensor(target), as_tensor(pred)
    if target.shape != pred.shape:
        raise ShapeError(f"cross_entropy_soft: target {target.shape} vs pred {pred.shape}")
    p = pred.data
    clamped = p < CE_CLAMP
    logp = np.log(np.maximum(p, CE_CLAMP))
    out = -(target.data * logp).sum(axis=axis)

    def bw(g):
        g = np.expand_dims(g, axis)
        gt = -g * logp
        gp = np.where(clamped, 0.0, -g * target.data / np.maximum(p, CE_CLAMP))
        return gt, gp

    return make_node(out, (target, pred), bw, "cross_entropy_soft")


def cross_entropy_ids(logits, targets, mask=None):
    """Mean token cross-entropy of logits (..., V) against integer targets (...)."""
    targets = np.asarray(targets, dtype=np.int64)
    x = logits.data
    if x.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy_ids: logits {x.shape} vs targets {targets.shape}")
    w = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    total = w.sum()
    if total == 0:
        raise ShapeError("cross_entropy_ids: empty mask")
    m = x.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(x - m).sum(axis=-1))
    picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
    loss = ((lse - picked) * w).sum() / total

    def bw(g):
        sm = np.exp(x - lse[..., None])
        np.put_along_axis(sm, targets[..., None],
                          np.take_along_axis(sm, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (g * sm * (w / total)[..., None],)

    return make_node(loss, (logits,), bw, "cross_entropy_ids")


def cosine_similarity(a, b, axis=-1, eps=1e-12):
    num = sum(mul(a, b), axis=axis)
    na = sqrt(add(sum(mul(a, a), axis=axis), eps))
    nb = sqrt(add(sum(mul(b, b), axis=axis), eps))
    return div(num, mul(na, nb))


def gumbel_noise(shape, rng):
    """Standard Gumbel draws via -log(-log(u)), u in the open unit interval."""
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax_st(logits, tau, rng=None, noise=None, mask=None, tape=None):
    """Straight-through Gumbel-softmax along the last axis.

    Returns ``(hard, soft)``. ``hard`` is exactly one-hot in the forward pass
    and routes its gradient through ``soft``. Ties in the argmax go to the
    lowest index. ``mask`` marks entries allowed to be sampled.

    ``tape`` (a :class:`STTape`) records or replays the discrete choices so a
    finite-difference oracle can evaluate the same branch.
    """
    if not tau > 0:
        raise ValueError(f"gumbel_softmax_st: tau must be positive, got {tau}")
    logits = as_tensor(logits)
    if tape is not None and tape.replaying:
        rec = tape.next()
        noise = rec["noise"]
    elif noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax_st needs an rng or explicit noise")
        noise = gumbel_noise(logits.shape, rng)
    perturbed = scale(add(logits, noise), 1.0 / tau)
    soft = softmax(perturbed, axis=-1, mask=mask)
    if tape is not None and tape.replaying:
        hard = add(rec["hard"], sub(soft, rec["soft"]))
        return hard, soft
    hard_np = one_hot(np.argmax(soft.data, axis=-1), soft.shape[-1])
    if tape is not None:
        tape.record(noise=noise, hard=hard_np, soft=soft.data.copy())
    return straight_through(hard_np, soft), soft


class STTape:
    """Records straight-through samples, then replays them with a fixed branch.

    In replay mode each sample evaluates ``hard + soft - soft_recorded``: the
    same value at the recorded point, and a smooth function whose ordinary
    derivative equals the straight-through gradient there.
    """

    def __init__(self):
        self.records = []
        self.replaying = False
        self._pos = 0

    def record(self, **rec):
        self.records.append(rec)

    def replay(self):
        self.replaying = True
        self._pos = 0
        return self

    def next(self):
        rec = self.records[self._pos]
        self._pos += 1
        return rec
