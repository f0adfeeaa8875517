"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Only rank-1 and rank-2 tensors are supported. Every differentiable operation
builds a fresh node whose ``_backward`` maps the output gradient to one
gradient per parent; :meth:`Tensor.backward` walks the recorded graph in
reverse topological order, visiting each node once.
"""

import contextlib

import numpy as np

from .exceptions import DimensionError, InputError, UsageError

_GRAD_ENABLED = True

ACTIVATIONS = ("relu", "leaky", "elu", "identity")


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float64 array that can participate in a computation graph.

    Parameters
    ----------
    data : array-like
        Values; copied into a contiguous float64 buffer.
    requires_grad : bool
        Whether ``backward`` should fill ``grad`` for this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise DimensionError(f"only rank <= 2 tensors are supported, got {arr.ndim}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        if np.isscalar(other):
            return shift(self, float(other))
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return shift(self, -float(other))
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def backward(self):
        """Accumulate d(self)/d(t) into ``t.grad`` for every requires_grad leaf.

        Raises
        ------
        UsageError
            If ``self`` does not hold exactly one element.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _topological_order(root):
    order, seen = [], set()
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product of ``a[m, k]`` and ``b[k, n]``."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return Tensor._from_op(ad @ bd, (a, b), backward, "matmul")


def transpose(a):
    if a.ndim != 2:
        raise DimensionError("transpose expects a rank-2 tensor")
    return Tensor._from_op(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def linear(x, w):
    """``x @ w.T`` for row-major weights ``w[out, in]`` (no bias)."""
    if x.ndim != 2 or w.ndim != 2:
        raise DimensionError("linear expects rank-2 input and weight")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} features, weight expects {w.shape[1]}")
    xd, wd = x.data, w.data

    def backward(g):
        return g @ wd, g.T @ xd

    return Tensor._from_op(xd @ wd.T, (x, w), backward, "linear")


def add_bias(y, b):
    """Add ``b[m]`` to every row of ``y[batch, m]``."""
    if b.ndim != 1 or y.ndim != 2 or y.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot add bias of shape {b.shape} to {y.shape}")

    def backward(g):
        return g, g.sum(axis=0)

    return Tensor._from_op(y.data + b.data, (y, b), backward, "add_bias")


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b):
    _check_same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a):
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def shift(a, k):
    return Tensor._from_op(a.data + k, (a,), lambda g: (g,), "shift")


def scale(a, k):
    return Tensor._from_op(a.data * k, (a,), lambda g: (g * k,), "scale")


def mul(a, b):
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def maximum(a, b):
    """Elementwise max; on ties the whole gradient goes to ``b``."""
    _check_same_shape(a, b, "maximum")
    pick_a = a.data > b.data

    def backward(g):
        return np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)

    return Tensor._from_op(np.where(pick_a, a.data, b.data), (a, b), backward, "maximum")


def activate(y, kind="relu", alpha=None):
    """Apply a one-sided activation componentwise.

    ``kind`` is one of ``relu``, ``leaky`` (slope ``alpha`` below zero,
    default 0.01), ``elu`` (``alpha * (exp(x) - 1)`` below zero, default 1)
    or ``identity``. The ReLU subgradient at exactly 0 is 0.
    """
    x = y.data
    if kind == "relu":
        pos = x > 0
        out = np.where(pos, x, 0.0)
        deriv = pos.astype(np.float64)
    elif kind == "leaky":
        a = 0.01 if alpha is None else alpha
        pos = x > 0
        out = np.where(pos, x, a * x)
        deriv = np.where(pos, 1.0, a)
    elif kind == "elu":
        a = 1.0 if alpha is None else alpha
        pos = x > 0
        ex = np.exp(np.minimum(x, 0.0))
        out = np.where(pos, x, a * (ex - 1.0))
        deriv = np.where(pos, 1.0, a * ex)
    elif kind == "identity":
        out = x.copy()
        deriv = np.ones_like(x)
    else:
        raise InputError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return Tensor._from_op(out, (y,), lambda g: (g * deriv,), kind)


def relu(y):
    return activate(y, "relu")


# --------------------------------------------------------------------------
# structural
# --------------------------------------------------------------------------


def concat_last(a, s):
    """Append ``s`` after ``a`` along the last axis.

    Works row-wise for ``a[batch, k]`` with ``s[batch, j]`` and for vectors.
    """
    if a.ndim != s.ndim or a.shape[:-1] != s.shape[:-1]:
        raise DimensionError(f"concat_last: leading shapes differ, {a.shape} vs {s.shape}")
    k = a.shape[-1]

    def backward(g):
        return g[..., :k], g[..., k:]

    return Tensor._from_op(np.concatenate([a.data, s.data], axis=-1), (a, s), backward, "concat")


def take(a, idx):
    """Basic indexing / slicing with a scatter-add backward."""
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(np.array(a.data[idx], dtype=np.float64), (a,), backward, "take")


def reduce(y, mode="sum"):
    """Sum or mean over the last axis, keeping it with extent 1."""
    k = y.shape[-1]
    if k < 1:
        raise DimensionError("reduce over an empty axis")
    if mode == "sum":
        factor = 1.0
    elif mode == "mean":
        factor = 1.0 / k
    else:
        raise InputError(f"unknown reduce mode {mode!r}")
    out = y.data.sum(axis=-1, keepdims=True) * factor

    def backward(g):
        return (np.broadcast_to(g * factor, y.shape).copy(),)

    return Tensor._from_op(out, (y,), backward, f"reduce_{mode}")


def sum_all(y):
    return Tensor._from_op(
        np.array(y.data.sum()), (y,), lambda g: (np.full(y.shape, float(g)),), "sum_all"
    )


def mean_all(y):
    n = y.data.size
    return Tensor._from_op(
        np.array(y.data.mean()), (y,), lambda g: (np.full(y.shape, float(g) / n),), "mean_all"
    )


def sum_squares(y):
    yd = y.data
    return Tensor._from_op(np.array((yd * yd).sum()), (y,), lambda g: (2.0 * g * yd,), "sumsq")


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def _log_softmax(logits):
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError("logits must be [batch, classes]")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    labels = labels.astype(np.int64)
    logp = _log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (float(g) / n),)

    return Tensor._from_op(np.array(loss), (logits,), backward, "softmax_xent")
