"""Small reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation as a node (kind, parent ids,
primal value, vector-Jacobian product). Nodes are appended in evaluation
order, so parents always precede children and one reverse sweep
accumulates the exact gradient of a scalar output with respect to every
node.

Example
-------
>>> tape = Tape()
>>> w = tape.param(np.ones((2, 2)), "w")
>>> loss = (w @ w).sum()
>>> grads = tape.backward(loss)
"""

import numpy as np
import scipy.linalg

from ..fmap import _factor_rows


class _Node:
    __slots__ = ("kind", "parents", "value", "vjp", "name")

    def __init__(self, kind, parents, value, vjp, name=None):
        self.kind = kind
        self.parents = parents
        self.value = value
        self.vjp = vjp
        self.name = name


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Value:
    """Handle to a tape node: the node id and the primal's shape."""
    __slots__ = ("tape", "id")
    __array_priority__ = 100

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def data(self):
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(id={self.id}, kind={self.tape.nodes[self.id].kind}, shape={self.shape})"

    # operator sugar
    def __add__(self, o):
        return self.tape.add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return self.tape.add(self, self.tape.neg(self.tape.lift(o)))

    def __rsub__(self, o):
        return self.tape.add(self.tape.lift(o), self.tape.neg(self))

    def __mul__(self, o):
        return self.tape.mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.neg(self)

    def __matmul__(self, o):
        return self.tape.matmul(self, o)

    def __rmatmul__(self, o):
        return self.tape.matmul(self.tape.lift(o), self)

    def __truediv__(self, o):
        if isinstance(o, Value):
            raise TypeError("division by a traced value is not supported")
        return self.tape.mul(self, 1.0 / np.asarray(o, dtype=float))

    @property
    def T(self):
        return self.tape.transpose(self)

    def sum(self, axis=None):
        return self.tape.sum(self, axis)

    def mean(self, axis=None):
        return self.tape.mean(self, axis)


class Tape:
    """Records operations; :meth:`backward` returns gradients of a scalar."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def _push(self, kind, parents, value, vjp, name=None):
        self.nodes.append(_Node(kind, tuple(p.id for p in parents), value, vjp, name))
        return Value(self, len(self.nodes) - 1)

    # -- leaves ------------------------------------------------------------
    def param(self, value, name):
        """Leaf whose gradient is reported by :meth:`backward` under ``name``."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} already on the tape")
        v = self._push("param", (), np.array(value, dtype=float), None, name)
        self.params[name] = v
        return v

    def const(self, value):
        return self._push("const", (), np.asarray(value, dtype=float), None)

    def lift(self, x):
        return x if isinstance(x, Value) else self.const(x)

    # -- elementwise -------------------------------------------------------
    def add(self, a, b):
        a, b = self.lift(a), self.lift(b)
        sa, sb = a.shape, b.shape
        return self._push("add", (a, b), a.data + b.data,
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def neg(self, a):
        return self._push("neg", (a,), -a.data, lambda g: (-g,))

    def mul(self, a, b):
        a, b = self.lift(a), self.lift(b)
        x, y = a.data, b.data
        return self._push("mul", (a, b), x * y,
                          lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    def square(self, a):
        x = a.data
        return self._push("square", (a,), x * x, lambda g: (2.0 * x * g,))

    def relu(self, a):
        x = a.data
        on = x > 0
        return self._push("relu", (a,), np.maximum(x, 0.0), lambda g: (g * on,))

    def sigmoid(self, a):
        x = a.data
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return self._push("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))

    def exp(self, a):
        y = np.exp(a.data)
        return self._push("exp", (a,), y, lambda g: (g * y,))

    def log(self, a):
        x = a.data
        return self._push("log", (a,), np.log(x), lambda g: (g / x,))

    def clip(self, a, lo, hi):
        """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
        x = a.data
        inside = (x >= lo) & (x <= hi)
        return self._push("clip", (a,), np.clip(x, lo, hi), lambda g: (g * inside,))

    # -- linear algebra ----------------------------------------------------
    def matmul(self, a, b):
        a, b = self.lift(a), self.lift(b)
        x, y = a.data, b.data
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("matmul expects two matrices")
        return self._push("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))

    def transpose(self, a):
        return self._push("transpose", (a,), a.data.T, lambda g: (g.T,))

    def sum(self, a, axis=None):
        shape = a.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
        return self._push("sum", (a,), np.asarray(a.data.sum(axis=axis)), vjp)

    def mean(self, a, axis=None):
        n = a.data.size if axis is None else a.shape[axis]
        return self.mul(self.sum(a, axis), 1.0 / n)

    def concat(self, parts, axis=1):
        sizes = [p.shape[axis] for p in parts]
        cuts = np.cumsum(sizes)[:-1]
        return self._push("concat", parts, np.concatenate([p.data for p in parts], axis=axis),
                          lambda g: tuple(np.split(g, cuts, axis=axis)))

    def rows(self, a, index):
        """Row gather ``a[index]`` (repeated indices accumulate)."""
        idx = np.asarray(index, dtype=np.int64)
        shape = a.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)
        return self._push("rows", (a,), a.data[idx], vjp)

    def cols(self, a, start, stop):
        """Column slice ``a[:, start:stop]``."""
        shape = a.shape

        def vjp(g):
            out = np.zeros(shape)
            out[:, start:stop] = g
            return (out,)
        return self._push("cols", (a,), a.data[:, start:stop].copy(), vjp)

    # -- normalizations ----------------------------------------------------
    def softmax(self, a):
        """Softmax along the last axis."""
        x = a.data
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)
        return self._push("softmax", (a,), y,
                          lambda g: (y * (g - np.sum(g * y, axis=-1, keepdims=True)),))

    def log_softmax(self, a):
        """Log-softmax along the last axis."""
        x = a.data
        s = x - x.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(s).sum(axis=-1, keepdims=True))
        y = s - lse
        p = np.exp(y)
        return self._push("log_softmax", (a,), y,
                          lambda g: (g - p * g.sum(axis=-1, keepdims=True),))

    def instance_norm(self, a, eps=1e-5):
        """Per-column standardization over the rows (the point set)."""
        x = a.data
        n = x.shape[0]
        mu = x.mean(axis=0, keepdims=True)
        var = x.var(axis=0, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xh = (x - mu) * inv

        def vjp(g):
            return (inv / n * (n * g - g.sum(axis=0, keepdims=True)
                               - xh * np.sum(g * xh, axis=0, keepdims=True)),)
        return self._push("instance_norm", (a,), xh, vjp)

    # -- functional map layer ---------------------------------------------
    def fmap_solve(self, A, B, mask, lam):
        """Masked least-squares functional map ``C`` with ``C A ~= B``.

        Forward solves ``(A A^T + lam diag(M_i)) c_i = A b_i`` row by row;
        backward solves the same symmetric systems against the incoming
        cotangent. ``mask`` and ``lam`` are constants and get no gradient.
        """
        if isinstance(mask, Value):
            raise TypeError("the mask is a constant of the functional map layer, not a traced value")
        Ad, Bd = A.data, B.data
        mask = np.asarray(mask, dtype=float)
        factors, _ = _factor_rows(Ad @ Ad.T, mask, lam)
        rhs = Bd @ Ad.T
        C = np.stack([scipy.linalg.cho_solve(cf, rhs[i]) for i, cf in enumerate(factors)])

        def vjp(g):
            G = np.stack([scipy.linalg.cho_solve(cf, g[i]) for i, cf in enumerate(factors)])
            gA = G.T @ Bd - (G.T @ C + C.T @ G) @ Ad
            gB = G @ Ad
            return gA, gB
        return self._push("fmap_solve", (A, B), C, vjp)

    # -- reverse sweep -----------------------------------------------------
    def backward(self, out):
        """Gradients of the scalar ``out`` for every parameter, by name."""
        if out.data.size != 1:
            raise ValueError("backward needs a scalar output")
        grads = [None] * (out.id + 1)
        grads[out.id] = np.ones_like(out.data)
        for i in range(out.id, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        return {name: (grads[v.id] if v.id < len(grads) and grads[v.id] is not None
                       else np.zeros_like(v.data))
                for name, v in self.params.items()}
