"""Dense float64 matrices with reverse-mode gradient accumulation.

A :class:`Tape` records primitive operations during a forward pass;
:meth:`Tape.backward` replays them in reverse, accumulating adjoints
into each reachable :class:`Param`.  Creation order is a topological
order, so replaying the recorded steps backwards visits every op exactly
once.  Calling backward twice without zeroing grads accumulates (by
design, not an error).

Shapes are strict: no implicit broadcasting beyond the dedicated
row-vector and scalar ops.  All values are immutable after construction;
Params are mutated only by :class:`Adam` and ``zero_grad``.  Independent
tapes may run concurrently as long as they share Params read-only.
"""

import numpy as np

from . import backend
from .errors import DimensionError, DomainError, TrainingError


def as_matrix(x):
    """Validate and convert to a C-contiguous float64 2-D matrix.

    Rejects empty shapes and non-finite entries.
    """
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"matrix dimensions must be positive, got {a.shape}")
    if not np.isfinite(a).all():
        raise DomainError("matrix entries must be finite")
    return a


def scalar_matrix(x):
    """A 1x1 matrix holding the scalar x."""
    return as_matrix([[float(x)]])


class Param:
    """A trainable matrix with an accumulated gradient of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = as_matrix(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[:] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def zero_grads(params):
    for p in params:
        p.zero_grad()


class Value:
    """A node produced during a taped forward pass."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = data
        self.grad = None

    @property
    def shape(self):
        return self.data.shape


class Tape:
    """Records a forward pass; replays adjoints in reverse.

    kernels defaults to the backend selected at import; pass a kernel
    module explicitly to pin one (used by the backend benchmark).  With
    record=False the same forward computations run without recording,
    for inference and finite-difference probes.
    """

    def __init__(self, kernels=None, record=True):
        self.k = kernels if kernels is not None else backend.kernels
        self.record = record
        self._steps = []
        self._values = []
        self._leaves = {}

    # -- node constructors -------------------------------------------------

    def _new(self, data):
        out = Value(data)
        if self.record:
            self._values.append(out)
        return out

    @staticmethod
    def _acc(value, grad):
        if value.grad is None:
            value.grad = grad
        else:
            value.grad += grad

    def const(self, x):
        """A constant leaf (no gradient is kept)."""
        return self._new(as_matrix(x))

    def scalar(self, x):
        return self.const([[float(x)]])

    def param(self, p):
        """A leaf whose adjoint flows into p.grad on backward."""
        if id(p) in self._leaves:
            return self._leaves[id(p)]
        out = Value(p.value)

        def back():
            if out.grad is not None:
                p.grad += out.grad

        if self.record:
            self._values.append(out)
            self._steps.append((out, back))
            self._leaves[id(p)] = out
        return out

    # -- primitive ops ------------------------------------------------------

    def matmul(self, x, y):
        if x.data.shape[1] != y.data.shape[0]:
            raise DimensionError(
                f"matmul: inner dimensions differ, {x.data.shape} x {y.data.shape}"
            )
        k = self.k
        out = self._new(k.matmul(x.data, y.data))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, k.matmul_nt(g, y.data))
            self._acc(y, k.matmul_tn(x.data, g))

        return self._finish(out, back)

    def _finish(self, out, back):
        if self.record:
            self._steps.append((out, back))
        return out

    def _binary(self, op, x, y):
        if x.data.shape != y.data.shape:
            raise DimensionError(
                f"elementwise op: shapes differ, {x.data.shape} vs {y.data.shape}"
            )
        return op(x, y)

    def add(self, x, y):
        def op(x, y):
            out = self._new(self.k.add(x.data, y.data))

            def back():
                g = out.grad
                if g is None:
                    return
                self._acc(x, g.copy())
                self._acc(y, g.copy())

            return self._finish(out, back)

        return self._binary(op, x, y)

    def sub(self, x, y):
        def op(x, y):
            out = self._new(self.k.sub(x.data, y.data))

            def back():
                g = out.grad
                if g is None:
                    return
                self._acc(x, g.copy())
                self._acc(y, -g)

            return self._finish(out, back)

        return self._binary(op, x, y)

    def mul(self, x, y):
        def op(x, y):
            k = self.k
            out = self._new(k.mul(x.data, y.data))

            def back():
                g = out.grad
                if g is None:
                    return
                self._acc(x, k.mul(g, y.data))
                self._acc(y, k.mul(g, x.data))

            return self._finish(out, back)

        return self._binary(op, x, y)

    def add_rowvec(self, x, v):
        """x + v with v a 1 x cols row (bias add)."""
        if v.data.shape != (1, x.data.shape[1]):
            raise DimensionError(
                f"add_rowvec: expected (1, {x.data.shape[1]}), got {v.data.shape}"
            )
        k = self.k
        out = self._new(k.add_rowvec(x.data, v.data))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, g.copy())
            self._acc(v, k.colsum(g))

        return self._finish(out, back)

    def add_scalarp(self, x, s):
        """x + s with s a 1x1 value, broadcast over x."""
        if s.data.shape != (1, 1):
            raise DimensionError(f"add_scalarp: s must be 1x1, got {s.data.shape}")
        k = self.k
        out = self._new(k.add_scalar(x.data, float(s.data[0, 0])))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, g.copy())
            self._acc(s, np.array([[k.sum_all(g)]]))

        return self._finish(out, back)

    def scale(self, x, c):
        """x * c for a plain float constant c."""
        c = float(c)
        k = self.k
        out = self._new(k.scale(x.data, c))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, k.scale(g, c))

        return self._finish(out, back)

    def relu(self, x):
        k = self.k
        out = self._new(k.relu(x.data))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, k.relu_grad(x.data, g))

        return self._finish(out, back)

    def exp(self, x):
        k = self.k
        out = self._new(k.exp(x.data))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, k.mul(g, out.data))

        return self._finish(out, back)

    def log(self, x):
        if (x.data <= 0.0).any():
            raise DomainError("log requires strictly positive input")
        k = self.k
        out = self._new(k.log(x.data))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, g / x.data)

        return self._finish(out, back)

    def softmax_rows(self, x):
        if x.data.shape[1] < 1:
            raise DimensionError("softmax over an empty row")
        k = self.k
        out = self._new(k.softmax_rows(x.data))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, k.softmax_rows_grad(out.data, g))

        return self._finish(out, back)

    def logsumexp_rows(self, x, mask=None):
        """Row-wise log-sum-exp, optionally over a 0/1 mask; (n, 1) output."""
        if mask is not None:
            mask = np.ascontiguousarray(mask, dtype=np.float64)
            if mask.shape != x.data.shape:
                raise DimensionError(
                    f"logsumexp mask shape {mask.shape} != {x.data.shape}"
                )
            if not (mask != 0.0).any(axis=1).all():
                raise DomainError("logsumexp: every row needs an unmasked entry")
        k = self.k
        out = self._new(k.logsumexp_rows(x.data, mask))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, k.logsumexp_rows_grad(x.data, mask, out.data, g))

        return self._finish(out, back)

    def pair_logits(self, h, w):
        """L[u,v] = sum_j h[u,j] h[v,j] w[j]; bitwise symmetric in (u, v)."""
        if w.data.shape != (h.data.shape[1], 1):
            raise DimensionError(
                f"pair_logits: w must be ({h.data.shape[1]}, 1), got {w.data.shape}"
            )
        k = self.k
        out = self._new(k.pair_logits(h.data, w.data))

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(h, k.pair_logits_grad_h(h.data, w.data, g))
            self._acc(w, k.pair_logits_grad_w(h.data, g))

        return self._finish(out, back)

    def mean_all(self, x):
        k = self.k
        out = self._new(np.array([[k.mean_all(x.data)]]))
        size = x.data.size
        shape = x.data.shape

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, np.full(shape, g[0, 0] / size))

        return self._finish(out, back)

    def sum_all(self, x):
        k = self.k
        out = self._new(np.array([[k.sum_all(x.data)]]))
        shape = x.data.shape

        def back():
            g = out.grad
            if g is None:
                return
            self._acc(x, np.full(shape, g[0, 0]))

        return self._finish(out, back)

    def stack_scalars(self, grid):
        """Assemble a matrix from a list of rows of 1x1 values."""
        rows = len(grid)
        cols = len(grid[0])
        data = np.empty((rows, cols), dtype=np.float64)
        for i, row in enumerate(grid):
            if len(row) != cols:
                raise DimensionError("stack_scalars: ragged rows")
            for j, v in enumerate(row):
                if v.data.shape != (1, 1):
                    raise DimensionError("stack_scalars: entries must be 1x1")
                data[i, j] = v.data[0, 0]
        out = self._new(data)

        def back():
            g = out.grad
            if g is None:
                return
            for i, row in enumerate(grid):
                for j, v in enumerate(row):
                    self._acc(v, np.array([[g[i, j]]]))

        return self._finish(out, back)

    # -- reverse pass --------------------------------------------------------

    def backward(self, loss):
        """Populate Param grads with d loss / d param (accumulates)."""
        if not self.record:
            raise TrainingError("cannot run backward on a non-recording tape")
        if loss.data.shape != (1, 1):
            raise DimensionError(f"backward needs a scalar loss, got {loss.data.shape}")
        for v in self._values:
            v.grad = None
        loss.grad = np.ones((1, 1), dtype=np.float64)
        for _, back in reversed(self._steps):
            back()


class Adam:
    """Adam with bias correction and decoupled weight decay.

    The decay step (value <- value - lr * wd * value) is applied before
    the Adam delta.  Defaults beta=(0.9, 0.999), eps=1e-8.
    """

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter {p.name!r}")
            if self.weight_decay != 0.0:
                p.value -= lr * self.weight_decay * p.value
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.value -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        zero_grads(self.params)
