"""Pure-Python (numpy) kernel backend.

Same call surface as the compiled ``gatsv._kernels`` extension; the
active module is chosen in :mod:`gatsv.backend`.  All matrix arguments
are C-contiguous float64 2-D arrays and every kernel returns a fresh
array.  ``fill_uniform`` implements the exact integer algorithm of the C
version, so random streams are bit-identical across backends.
"""

import numpy as np

NAME = "python"

_MASK64 = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 2.0 ** -53


def matmul(a, b):
    return a @ b


def matmul_nt(a, b):
    """a @ b.T"""
    return np.ascontiguousarray(a @ b.T)


def matmul_tn(a, b):
    """a.T @ b"""
    return np.ascontiguousarray(a.T @ b)


def add(a, b):
    return a + b


def sub(a, b):
    return a - b


def mul(a, b):
    return a * b


def add_rowvec(a, v):
    return a + v


def add_scalar(a, s):
    return a + s


def scale(a, c):
    return a * c


def colsum(a):
    return a.sum(axis=0, keepdims=True)


def relu(a):
    return np.maximum(a, 0.0)


def relu_grad(x, dy):
    return np.where(x > 0.0, dy, 0.0)


def exp(a):
    return np.exp(a)


def log(a):
    return np.log(a)


def softmax_rows(a):
    m = a.max(axis=1, keepdims=True)
    e = np.exp(a - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(y, dy):
    # dx = y * (dy - sum_j dy_j * y_j) per row
    dot = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - dot)


def logsumexp_rows(a, mask):
    """Row-wise log(sum(exp)) over unmasked entries; (n, 1) output.

    mask is None (all entries) or a 0/1 float64 matrix of a's shape with
    at least one nonzero per row.
    """
    if mask is None:
        m = a.max(axis=1, keepdims=True)
        s = np.exp(a - m).sum(axis=1, keepdims=True)
    else:
        neg = np.where(mask != 0.0, a, -np.inf)
        m = neg.max(axis=1, keepdims=True)
        s = (np.exp(a - m) * mask).sum(axis=1, keepdims=True)
    return m + np.log(s)


def logsumexp_rows_grad(a, mask, lse, dy):
    g = np.exp(a - lse) * dy
    if mask is not None:
        g = g * mask
    return g


def pair_logits(h, w):
    """L[u, v] = sum_j h[u, j] * h[v, j] * w[j]  for a column vector w.

    Computed from the elementwise pair products so L is bitwise symmetric
    (the term h[u,j]*h[v,j] is commutative and the per-pair reduction
    order is identical for (u,v) and (v,u)).
    """
    p = h[:, None, :] * h[None, :, :]
    return np.ascontiguousarray((p * w[:, 0]).sum(axis=2))


def pair_logits_grad_h(h, w, dl):
    # dH = (dL + dL.T) @ (h * w_row)
    return np.ascontiguousarray((dl + dl.T) @ (h * w[:, 0]))


def pair_logits_grad_w(h, dl):
    # dw[j] = sum_{u,v} dL[u,v] h[u,j] h[v,j]
    t = dl @ h
    return np.ascontiguousarray((h * t).sum(axis=0)[:, None])


def mean_all(a):
    return float(a.mean())


def sum_all(a):
    return float(a.sum())


def fill_uniform(state, out):
    """Fill ``out`` with doubles in [0, 1) from xoshiro256**.

    ``state`` is a uint64 array of 4 words, updated in place.  Matches
    the per-draw Python generator and the C kernel bit for bit.
    """
    s0, s1, s2, s3 = (int(v) for v in state)
    n = out.shape[0]
    for i in range(n):
        r = ((((s1 * 5) & _MASK64) << 7 | ((s1 * 5) & _MASK64) >> 57) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        out[i] = (r >> 11) * _INV_2_53
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
