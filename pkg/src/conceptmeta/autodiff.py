"""Reverse-mode automatic differentiation over dense float64 tensors.

The graph is dynamic: every operation records its parents together with a
closure that routes the incoming gradient to them. ``Tensor.backward`` seeds
the scalar output with 1.0 and walks the graph once in reverse topological
order. Within one backward pass each node receives its full gradient before
propagating; across passes gradients *accumulate* into ``.grad`` until
``zero_grad`` resets them — the training loop owns that reset.

Shape rules are deliberately narrow: elementwise ops take equal shapes or a
scalar operand, ``add``/``sub`` additionally accept matrix + row-vector for
bias terms, and ``matmul`` covers the 1-D/2-D combinations a small MLP needs.
Anything else raises ``DimensionError`` naming both shapes.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateInputError, DimensionError, GraphError


class Tensor:
    """Dense float64 array participating in a differentiation graph.

    A tensor is a leaf (``parents == ()``) or the result of an op. ``grad``
    is populated by ``backward`` for every node with ``requires_grad`` and
    has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad=False, parents=(), bw=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        needs = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.requires_grad = needs
        # Frozen subgraphs (nothing requires grad) drop their history so
        # evaluation-only forwards never build a graph.
        self._parents = tuple(parents) if needs else ()
        self._bw = bw if needs else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise GraphError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(node) into ``.grad`` of every reachable node.

        ``self`` must hold exactly one element. Repeated calls without
        ``zero_grad`` add up, which is the documented accumulation contract.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _topo_order(self)
        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._bw is not None:
                node._bw(g, flowing)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"


def parameter(data):
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


def constant(data):
    return Tensor(data)


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _topo_order(root):
    """Iterative post-order over parent edges; ancestors precede descendants."""
    seen, order, stack = set(), [], [(root, False)]
    while stack:
        node, ready = stack.pop()
        if ready:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _acc(flowing, t, g):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    prev = flowing.get(id(t))
    flowing[id(t)] = g if prev is None else prev + g


def _reduce_to(g, shape):
    """Collapse a broadcast gradient back onto the operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if len(shape) == 1 and g.ndim == 2 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    if len(shape) == 2 and shape[1] == 1 and g.ndim == 2 and g.shape[0] == shape[0]:
        return g.sum(axis=1, keepdims=True)
    raise GraphError(f"cannot reduce gradient {g.shape} to operand shape {shape}")


# -- elementwise binary ops ---------------------------------------------


def _check_addlike(a, b, op):
    da, db = a.data, b.data
    if da.shape == db.shape or da.ndim == 0 or db.ndim == 0:
        return
    if da.ndim == 2 and db.ndim == 1 and da.shape[1] == db.shape[0]:
        return
    if db.ndim == 2 and da.ndim == 1 and db.shape[1] == da.shape[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {da.shape} and {db.shape}")


def _check_mullike(a, b, op):
    da, db = a.data, b.data
    if da.shape == db.shape or da.ndim == 0 or db.ndim == 0:
        return
    # column broadcast: (n, m) against (n, 1), either side
    if da.ndim == 2 and db.ndim == 2 and da.shape[0] == db.shape[0] \
            and 1 in (da.shape[1], db.shape[1]):
        return
    raise DimensionError(f"{op}: incompatible shapes {da.shape} and {db.shape}")


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_addlike(a, b, "add")

    def bw(g, flowing):
        _acc(flowing, a, _reduce_to(g, a.data.shape))
        _acc(flowing, b, _reduce_to(g, b.data.shape))

    return Tensor(a.data + b.data, parents=(a, b), bw=bw)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_addlike(a, b, "sub")

    def bw(g, flowing):
        _acc(flowing, a, _reduce_to(g, a.data.shape))
        _acc(flowing, b, _reduce_to(-g, b.data.shape))

    return Tensor(a.data - b.data, parents=(a, b), bw=bw)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_mullike(a, b, "mul")

    def bw(g, flowing):
        _acc(flowing, a, _reduce_to(g * b.data, a.data.shape))
        _acc(flowing, b, _reduce_to(g * a.data, b.data.shape))

    return Tensor(a.data * b.data, parents=(a, b), bw=bw)


def div(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_mullike(a, b, "div")

    def bw(g, flowing):
        _acc(flowing, a, _reduce_to(g / b.data, a.data.shape))
        _acc(flowing, b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(a.data / b.data, parents=(a, b), bw=bw)


def neg(a):
    a = _coerce(a)

    def bw(g, flowing):
        _acc(flowing, a, -g)

    return Tensor(-a.data, parents=(a,), bw=bw)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    """Matrix product. Supports 2Dx2D, 1Dx2D, 2Dx1D and 1Dx1D (dot)."""
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    if da.ndim not in (1, 2) or db.ndim not in (1, 2):
        raise DimensionError(f"matmul: operands must be 1-D or 2-D, got {da.shape} and {db.shape}")
    if da.shape[-1] != db.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree: {da.shape} x {db.shape}")
    out = np.asarray(np.matmul(da, db))

    def bw(g, flowing):
        A = da if da.ndim == 2 else da[None, :]
        B = db if db.ndim == 2 else db[:, None]
        if da.ndim == 1 and db.ndim == 1:
            G = np.asarray(g).reshape(1, 1)
        elif da.ndim == 1:
            G = g[None, :]
        elif db.ndim == 1:
            G = g[:, None]
        else:
            G = g
        ga = G @ B.T
        gb = A.T @ G
        if da.ndim == 1:
            ga = ga[0]
        if db.ndim == 1:
            gb = gb[:, 0]
        _acc(flowing, a, ga)
        _acc(flowing, b, gb)

    return Tensor(out, parents=(a, b), bw=bw)


def transpose(a):
    a = _coerce(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")

    def bw(g, flowing):
        _acc(flowing, a, g.T)

    return Tensor(a.data.T, parents=(a,), bw=bw)


def reshape(a, shape):
    a = _coerce(a)
    out = a.data.reshape(shape)
    src = a.data.shape

    def bw(g, flowing):
        _acc(flowing, a, g.reshape(src))

    return Tensor(out, parents=(a,), bw=bw)


# -- nonlinearities -------------------------------------------------------


def relu(a):
    a = _coerce(a)
    mask = a.data > 0

    def bw(g, flowing):
        _acc(flowing, a, g * mask)

    return Tensor(np.where(mask, a.data, 0.0), parents=(a,), bw=bw)


def sigmoid(a):
    a = _coerce(a)
    z = np.exp(-np.abs(a.data))
    s = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def bw(g, flowing):
        _acc(flowing, a, g * s * (1.0 - s))

    return Tensor(s, parents=(a,), bw=bw)


def log(a):
    a = _coerce(a)
    if not (a.data > 0).all():
        raise DegenerateInputError("log requires strictly positive input")

    def bw(g, flowing):
        _acc(flowing, a, g / a.data)

    return Tensor(np.log(a.data), parents=(a,), bw=bw)


def exp(a):
    a = _coerce(a)
    out = np.exp(a.data)

    def bw(g, flowing):
        _acc(flowing, a, g * out)

    return Tensor(out, parents=(a,), bw=bw)


def softmax(a):
    """Softmax along the last axis with max-subtraction; 1-D or 2-D input."""
    a = _coerce(a)
    if a.data.ndim not in (1, 2):
        raise DimensionError(f"softmax: expected 1-D or 2-D, got shape {a.shape}")
    if a.data.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g, flowing):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _acc(flowing, a, y * (g - inner))

    return Tensor(y, parents=(a,), bw=bw)


def neg_cosine_rows(a, b):
    """Pairwise negative cosine distances between two row sets: (n, m) output.

    Batched counterpart of ``neg_cosine_dist``; entry (i, j) is
    -<a_i, b_j>/(|a_i||b_j|). Raises on any zero-norm row.
    """
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    if da.ndim != 2 or db.ndim != 2 or da.shape[1] != db.shape[1]:
        raise DimensionError(
            f"neg_cosine_rows: expected matrices with equal width, got {da.shape} and {db.shape}")
    na = np.linalg.norm(da, axis=1, keepdims=True)
    nb = np.linalg.norm(db, axis=1, keepdims=True)
    if (na == 0).any() or (nb == 0).any():
        raise DegenerateInputError("neg_cosine_rows: zero-norm row")
    an = da / na
    bn = db / nb
    cos = an @ bn.T

    def bw(g, flowing):
        gc = -g  # gradient w.r.t. the cosine matrix
        ga = (gc @ bn - (gc * cos).sum(axis=1, keepdims=True) * an) / na
        gb = (gc.T @ an - (gc * cos).sum(axis=0)[:, None] * bn) / nb
        _acc(flowing, a, ga)
        _acc(flowing, b, gb)

    return Tensor(-cos, parents=(a, b), bw=bw)


def neg_cosine_dist(u, v):
    """-<u,v>/(|u||v|) as a scalar tensor; raises on zero-norm input."""
    u, v = _coerce(u), _coerce(v)
    du, dv = u.data, v.data
    if du.ndim != 1 or dv.ndim != 1 or du.shape != dv.shape:
        raise DimensionError(
            f"neg_cosine_dist: expected two equal-length vectors, got {du.shape} and {dv.shape}")
    nu = np.linalg.norm(du)
    nv = np.linalg.norm(dv)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("neg_cosine_dist: zero-norm vector")
    dot = float(du @ dv)
    val = -dot / (nu * nv)

    def bw(g, flowing):
        gs = float(g)
        _acc(flowing, u, gs * (-dv / (nu * nv) + dot * du / (nu ** 3 * nv)))
        _acc(flowing, v, gs * (-du / (nu * nv) + dot * dv / (nu * nv ** 3)))

    return Tensor(val, parents=(u, v), bw=bw)


# -- structure ------------------------------------------------------------


def concat(tensors):
    """Concatenate along the last axis (1-D or 2-D, equal leading dims)."""
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    ndim = tensors[0].data.ndim
    if ndim not in (1, 2) or any(t.data.ndim != ndim for t in tensors):
        raise DimensionError("concat: all operands must share 1-D or 2-D rank")
    if ndim == 2:
        rows = tensors[0].data.shape[0]
        if any(t.data.shape[0] != rows for t in tensors):
            raise DimensionError("concat: leading dimensions disagree")
    widths = [t.data.shape[-1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=-1)

    def bw(g, flowing):
        off = 0
        for t, w in zip(tensors, widths):
            _acc(flowing, t, g[..., off:off + w])
            off += w

    return Tensor(out, parents=tuple(tensors), bw=bw)


def stack(tensors):
    """Stack equal-shaped tensors (scalars make a vector, vectors a matrix)."""
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack of an empty list")
    shape = tensors[0].data.shape
    if any(t.data.shape != shape for t in tensors):
        raise DimensionError("stack: operands must share one shape")
    out = np.stack([t.data for t in tensors], axis=0)

    def bw(g, flowing):
        for i, t in enumerate(tensors):
            _acc(flowing, t, g[i])

    return Tensor(out, parents=tuple(tensors), bw=bw)


def index(a, i):
    """Scalar element of a 1-D tensor."""
    a = _coerce(a)
    if a.data.ndim != 1:
        raise DimensionError(f"index: expected a vector, got shape {a.shape}")
    i = int(i)
    if not 0 <= i < a.data.shape[0]:
        raise IndexError(f"index {i} out of range for length {a.data.shape[0]}")
    out = np.asarray(a.data[i])

    def bw(g, flowing):
        z = np.zeros_like(a.data)
        z[i] = g
        _acc(flowing, a, z)

    return Tensor(out, parents=(a,), bw=bw)


def row(a, i):
    """Row of a matrix as a 1-D tensor."""
    a = _coerce(a)
    if a.data.ndim != 2:
        raise DimensionError(f"row: expected a matrix, got shape {a.shape}")
    i = int(i)
    if not 0 <= i < a.data.shape[0]:
        raise IndexError(f"row {i} out of range for {a.data.shape[0]} rows")

    def bw(g, flowing):
        z = np.zeros_like(a.data)
        z[i] = g
        _acc(flowing, a, z)

    return Tensor(a.data[i].copy(), parents=(a,), bw=bw)


# -- reductions and losses -------------------------------------------------


def _bcast_axis(g, shape, axis):
    if axis is None:
        return np.full(shape, float(g))
    if axis == 0:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(g[:, None], shape).copy()


def _check_axis(a, axis, op):
    if axis is None:
        return
    if a.data.ndim != 2 or axis not in (0, 1):
        raise DimensionError(f"{op}: axis {axis} unsupported for shape {a.shape}")


def tsum(a, axis=None):
    a = _coerce(a)
    _check_axis(a, axis, "sum")
    out = np.asarray(a.data.sum(axis=axis))

    def bw(g, flowing):
        _acc(flowing, a, _bcast_axis(g, a.data.shape, axis))

    return Tensor(out, parents=(a,), bw=bw)


def tmean(a, axis=None):
    a = _coerce(a)
    _check_axis(a, axis, "mean")
    out = np.asarray(a.data.mean(axis=axis))
    n = a.data.size if axis is None else a.data.shape[axis]

    def bw(g, flowing):
        _acc(flowing, a, _bcast_axis(g, a.data.shape, axis) / n)

    return Tensor(out, parents=(a,), bw=bw)


def squared_error(a, b):
    """Elementwise (a - b)^2; reduce with ``tmean``/``tsum`` for a loss."""
    a, b = _coerce(a), _coerce(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"squared_error: shapes disagree: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data

    def bw(g, flowing):
        _acc(flowing, a, 2.0 * diff * g)
        _acc(flowing, b, -2.0 * diff * g)

    return Tensor(diff * diff, parents=(a, b), bw=bw)
