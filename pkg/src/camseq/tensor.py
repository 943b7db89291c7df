"""Dense float64 arrays with tape-based reverse-mode differentiation.

The engine is deliberately small: the dozen primitives below are enough to
express an LSTM, the mutual-aid recurrent cell, context-vector attention and
the fused classification heads, and to get exact analytic gradients of a
scalar loss with one backward sweep over the recorded tape.

Shapes are plain numpy shapes. Batched activations are column-stacked
matrices ``(dim, batch)`` and flow through the same primitives as single
vectors; broadcasting (e.g. a ``(h, 1)`` bias against ``(h, B)``) is handled
by summing gradients back over the broadcast axes.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not match the primitive's contract."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finiteness is required."""


class TapeError(RuntimeError):
    """Tape misuse: typically a second backward without rebuilding."""


_LOCAL = threading.local()


def _stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    """The innermost tape on this thread, or None when not recording."""
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive ops applied during one forward pass.

    Use as a context manager; ops executed inside record themselves when any
    input requires gradients. One backward pass consumes the tape.
    """

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        if popped is not self:
            raise TapeError("tape context stack corrupted")
        return False

    def __len__(self):
        return len(self._nodes)


class DiffArray:
    """A dense float64 array plus a same-shape gradient buffer.

    ``grad`` exists (as zeros) whenever ``requires_grad`` is set; backward
    accumulates into it. Values of constants and parameters persist across
    tapes; op outputs belong to the tape that produced them.
    """

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if self.requires_grad else None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def check_finite(self, what="array"):
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError(f"non-finite values in {what}")
        return self

    def item(self):
        return float(self.values)

    def __repr__(self):
        return f"DiffArray(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(values):
    return DiffArray(values, requires_grad=True)


def constant(values):
    return DiffArray(values, requires_grad=False)


def _as_diff(x):
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _emit(values, inputs, grad_fn):
    """Wrap op output; record on the active tape when gradients are needed.

    ``grad_fn(g)`` must return one gradient array (or None) per input.
    """
    tape = active_tape()
    needs = tape is not None and any(a.requires_grad for a in inputs)
    out = DiffArray(values, requires_grad=needs)
    if needs:
        tape._nodes.append((out, inputs, grad_fn))
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _as_diff(a), _as_diff(b)
    try:
        values = a.values + b.values
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc
    return _emit(values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _as_diff(a), _as_diff(b)
    try:
        values = a.values - b.values
    except ValueError as exc:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from exc
    return _emit(values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = _as_diff(a), _as_diff(b)
    try:
        values = a.values * b.values
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc
    av, bv = a.values, b.values
    return _emit(values, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def sigmoid(a):
    a = _as_diff(a)
    # 0.5 * (1 + tanh(x / 2)) is the logistic function in overflow-safe form
    values = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return _emit(values, (a,), lambda g: (g * values * (1.0 - values),))


def tanh(a):
    a = _as_diff(a)
    values = np.tanh(a.values)
    return _emit(values, (a,), lambda g: (g * (1.0 - values * values),))


def matmul(a, b):
    """``(m, n) @ (n,) -> (m,)`` or ``(m, n) @ (n, k) -> (m, k)``."""
    a, b = _as_diff(a), _as_diff(b)
    if a.values.ndim != 2 or b.values.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree {a.shape} @ {b.shape}")
    values = a.values @ b.values
    av, bv = a.values, b.values

    if b.values.ndim == 1:
        def grad_fn(g):
            return (np.outer(g, bv), av.T @ g)
    else:
        def grad_fn(g):
            return (g @ bv.T, av.T @ g)

    return _emit(values, (a, b), grad_fn)


def reshape(a, shape):
    a = _as_diff(a)
    old = a.shape
    values = a.values.reshape(shape)
    return _emit(values, (a,), lambda g: (g.reshape(old),))


def take_row(a, index):
    """Row ``index`` of a 2-D array, kept 2-D; 1-D input yields shape (1,)."""
    a = _as_diff(a)
    values = a.values[index:index + 1]
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[index:index + 1] = g
        return (full,)

    return _emit(values, (a,), grad_fn)


def concat_rows(parts):
    """Concatenate along axis 0; backward splits the gradient back up."""
    parts = [_as_diff(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows: empty input")
    values = np.concatenate([p.values for p in parts], axis=0)
    sizes = [p.shape[0] for p in parts]

    def grad_fn(g):
        out, off = [], 0
        for n in sizes:
            out.append(g[off:off + n])
            off += n
        return tuple(out)

    return _emit(values, tuple(parts), grad_fn)


def sum_all(a):
    a = _as_diff(a)
    values = a.values.sum()
    shape = a.shape
    return _emit(values, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def softmax_over_time(scores):
    """Softmax along axis 0 (the time axis), overflow-safe.

    Accepts ``(T,)`` or ``(T, B)``; each column normalizes to 1.
    """
    scores = _as_diff(scores)
    if scores.values.shape[0:1] == (0,) or scores.values.size == 0:
        raise ShapeError("softmax_over_time: empty input")
    x = scores.values
    m = x.max(axis=0, keepdims=True)
    e = np.exp(x - m)
    values = e / e.sum(axis=0, keepdims=True)

    def grad_fn(g):
        inner = (g * values).sum(axis=0, keepdims=True)
        return (values * (g - inner),)

    return _emit(values, (scores,), grad_fn)


def pairwise_outer(p, q):
    """Per-column outer product, flattened row-major.

    ``(C,) x (C,) -> (C*C,)`` with entry ``i*C + j = p[i] * q[j]``, and
    ``(C, B) x (C, B) -> (C*C, B)`` column by column.
    """
    p, q = _as_diff(p), _as_diff(q)
    if p.values.ndim != q.values.ndim:
        raise ShapeError(f"pairwise_outer: rank mismatch {p.shape} vs {q.shape}")
    pv, qv = p.values, q.values
    if pv.ndim == 1:
        values = np.outer(pv, qv).reshape(-1)
        cp, cq = pv.shape[0], qv.shape[0]

        def grad_fn(g):
            g2 = g.reshape(cp, cq)
            return (g2 @ qv, g2.T @ pv)
    elif pv.ndim == 2:
        if pv.shape[1] != qv.shape[1]:
            raise ShapeError(f"pairwise_outer: batch mismatch {p.shape} vs {q.shape}")
        cp, cq = pv.shape[0], qv.shape[0]
        values = np.einsum("ib,jb->ijb", pv, qv).reshape(cp * cq, pv.shape[1])

        def grad_fn(g):
            g3 = g.reshape(cp, cq, -1)
            return (np.einsum("ijb,jb->ib", g3, qv), np.einsum("ijb,ib->jb", g3, pv))
    else:
        raise ShapeError(f"pairwise_outer: unsupported rank {p.shape}")
    return _emit(values, (p, q), grad_fn)


def cross_entropy(logits, label):
    """Mean negative log-likelihood in log-sum-exp form.

    ``logits`` is ``(C,)`` with an integer ``label``, or ``(C, B)`` with a
    length-B integer array; the batched form averages over columns.
    """
    logits = _as_diff(logits)
    x = logits.values
    single = x.ndim == 1
    col = x[:, None] if single else x
    labels = np.atleast_1d(np.asarray(label, dtype=np.intp))
    n_classes, batch = col.shape
    if labels.shape != (batch,):
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for batch of {batch}")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"cross_entropy: label out of range [0, {n_classes})")
    m = col.max(axis=0)
    e = np.exp(col - m)
    lse = m + np.log(e.sum(axis=0))
    losses = lse - col[labels, np.arange(batch)]
    value = losses.mean()
    probs = e / e.sum(axis=0)

    def grad_fn(g):
        d = probs.copy()
        d[labels, np.arange(batch)] -= 1.0
        d *= float(g) / batch
        return (d[:, 0] if single else d,)

    return _emit(np.float64(value), (logits,), grad_fn)


def backward(loss, tape):
    """Populate gradients of everything ``loss`` depends on.

    Walks the tape in exact reverse recording order; each parameter ends up
    with d(loss)/d(param) in its ``grad`` buffer, and parameters that did not
    participate keep their zeros. A tape can be consumed only once.
    """
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any recorded operation")
    tape._consumed = True
    loss.grad[...] = 1.0
    for out, inputs, grad_fn in reversed(tape._nodes):
        grads = grad_fn(out.grad)
        for inp, g in zip(inputs, grads):
            if inp.requires_grad and g is not None:
                inp.grad += g


def zero_grads(arrays):
    for a in arrays:
        a.zero_grad()


def softmax_np(x, axis=0):
    """Plain-numpy softmax for gradient-free paths."""
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)
