"""Farkas layers: dense ReLU layers that always keep one neuron active.

A Farkas layer trains ``m - 1`` weight rows and ``m`` biases. The last row is
never stored; it is rebuilt on every forward pass as the negated aggregate
(sum or mean) of the trainable outputs, and the last bias is clamped from
below. With ``lam`` the certificate vector of the layer this gives

    lam @ W_eff == 0   and   lam @ b_eff > cutoff,

so for any input ``x`` the largest pre-activation is at least
``lam @ (W_eff x + b_eff) > cutoff``.
"""

import numpy as np

from . import tensor as T
from .exceptions import ConstructionError, DimensionError, InputError
from .tensor import Tensor

AGG_MODES = ("sum", "mean")
DEFAULT_EPSILON = 1e-6


def _check_agg(agg):
    if agg not in AGG_MODES:
        raise InputError(f"aggregation must be one of {AGG_MODES}, got {agg!r}")


def make_lambda(m):
    """Uniform simplex vector of length ``m`` (requires ``m >= 2``)."""
    if m < 2:
        raise ConstructionError(f"a Farkas layer needs at least 2 outputs, got {m}")
    return np.full(m, 1.0 / m)


def certificate_lambda(m, agg):
    """Simplex vector ``lam`` with ``lam @ W_eff == 0`` for the given aggregation.

    Sum mode uses the uniform vector. In mean mode the appended row is the
    negated mean, so the certificate is proportional to ``(1, ..., 1, m - 1)``.
    """
    _check_agg(agg)
    if agg == "sum":
        return make_lambda(m)
    if m < 2:
        raise ConstructionError(f"a Farkas layer needs at least 2 outputs, got {m}")
    lam = np.ones(m)
    lam[-1] = m - 1
    return lam / lam.sum()


def cutoff_scale(m, agg):
    """``1 / lam_m`` for the certificate of ``(m, agg)``: ``m`` for sum, ``2`` for mean."""
    return 1.0 / certificate_lambda(m, agg)[-1]


def aggregate_rows(w_train, agg):
    """Appended weight row ``-Agg(w_1, ..., w_{m-1})``."""
    _check_agg(agg)
    w_train = np.asarray(w_train, dtype=np.float64)
    if w_train.ndim != 2 or w_train.shape[0] < 1:
        raise DimensionError(f"need at least one trainable row, got shape {w_train.shape}")
    if agg == "sum":
        return -w_train.sum(axis=0)
    return -w_train.mean(axis=0)


def aggregate_bias(b, agg, cutoff=0.0, epsilon=DEFAULT_EPSILON):
    """Clamped last bias ``max(cutoff / lam_m - Agg(b[:-1]) + epsilon, b[-1])``.

    ``b`` holds all ``m`` raw biases; the last entry is the trainable raw value.
    For ``cutoff == 0`` this is the plain ``max(-Agg(b[:-1]), b_m)`` made
    strict by ``epsilon``.
    """
    _check_agg(agg)
    b = np.asarray(b, dtype=np.float64)
    m = b.shape[0]
    if m < 2:
        raise ConstructionError(f"a Farkas layer needs at least 2 outputs, got {m}")
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    head = b[:-1]
    agg_val = head.sum() if agg == "sum" else head.mean()
    candidate = cutoff * cutoff_scale(m, agg) - agg_val + epsilon
    return float(max(candidate, b[-1]))


def _aggregate_bias_tensor(b, agg, cutoff, epsilon):
    m = b.shape[0]
    head = b[: m - 1]
    candidate = T.reduce(head, agg) * -1.0 + (cutoff * cutoff_scale(m, agg) + epsilon)
    return head, T.maximum(candidate, b[m - 1 :])


class FarkasDenseLayer:
    """Dense Farkas layer mapping ``n`` features to ``m >= 2`` activations.

    Parameters
    ----------
    n, m : int
        Input and output widths.
    agg : {"sum", "mean"}
        How the appended neuron aggregates the trainable outputs.
    cutoff : float
        Activation cutoff; 0 for ReLU.
    epsilon : float
        Strictness margin added to the bias clamp.
    activation, alpha
        Passed to :func:`farkasnet.tensor.activate`.
    """

    kind = "farkas_dense"

    def __init__(self, n, m, agg="sum", cutoff=0.0, epsilon=DEFAULT_EPSILON,
                 activation="relu", alpha=None, weight=None, bias=None):
        if m < 2:
            raise ConstructionError(f"a Farkas layer needs at least 2 outputs, got {m}")
        if n < 1:
            raise ConstructionError("input width must be positive")
        _check_agg(agg)
        if epsilon <= 0:
            raise InputError("epsilon must be positive")
        self.n, self.m = int(n), int(m)
        self.agg = agg
        self.cutoff = float(cutoff)
        self.epsilon = float(epsilon)
        self.activation = activation
        self.alpha = alpha
        self.W = Tensor(np.zeros((m - 1, n)) if weight is None else weight, requires_grad=True)
        self.b = Tensor(np.zeros(m) if bias is None else bias, requires_grad=True)
        if self.W.shape != (m - 1, n) or self.b.shape != (m,):
            raise DimensionError(
                f"expected weight {(m - 1, n)} and bias {(m,)}, "
                f"got {self.W.shape} and {self.b.shape}"
            )

    @property
    def lambda_(self):
        return certificate_lambda(self.m, self.agg)

    def parameters(self):
        return [self.W, self.b]

    def effective_weights(self):
        w = self.W.data
        return np.vstack([w, aggregate_rows(w, self.agg)[None, :]])

    def effective_bias(self):
        b = self.b.data
        clamped = aggregate_bias(b, self.agg, self.cutoff, self.epsilon)
        return np.concatenate([b[:-1], [clamped]])

    def guaranteed_margin(self):
        """``lam @ b_eff``, a lower bound on the min-max pre-activation."""
        return float(self.lambda_ @ self.effective_bias())

    def preactivation(self, x):
        if x.ndim != 2 or x.shape[1] != self.n:
            raise DimensionError(f"expected input with {self.n} features, got shape {x.shape}")
        y = T.linear(x, self.W)
        y_agg = T.reduce(y, self.agg) * -1.0
        head, b_last = _aggregate_bias_tensor(self.b, self.agg, self.cutoff, self.epsilon)
        return T.add_bias(T.concat_last(y, y_agg), T.concat_last(head, b_last))

    def forward(self, x):
        return T.activate(self.preactivation(x), self.activation, self.alpha)

    __call__ = forward

    def __repr__(self):
        return f"FarkasDenseLayer(n={self.n}, m={self.m}, agg={self.agg!r}, cutoff={self.cutoff})"


class FarkasResidualBlock:
    """Residual Farkas block mapping ``m - 1`` features to ``m`` activations.

    The inner Farkas layer maps ``m - 1 -> hidden``; a bias-free weight
    ``W2[m - 1, hidden]`` maps back. The appended neuron reads
    ``-Agg(x + W2 u)``. With ``shortcut=True`` (default) the trainable neurons
    also see the shortcut sum ``x + W2 u``, which keeps the certificate exact.
    ``shortcut=False`` concatenates ``W2 u`` alone, leaving an input-dependent
    offset of ``-lam_m * Agg(x)`` in ``lam @ z``; see :meth:`certified_margin`.
    """

    kind = "farkas_residual"

    def __init__(self, m, hidden, agg="sum", cutoff=0.0, epsilon=DEFAULT_EPSILON,
                 activation="relu", alpha=None, shortcut=True):
        if m < 2:
            raise ConstructionError(f"a Farkas block needs at least 2 outputs, got {m}")
        _check_agg(agg)
        if epsilon <= 0:
            raise InputError("epsilon must be positive")
        self.m, self.hidden = int(m), int(hidden)
        self.n = self.m - 1
        self.agg = agg
        self.cutoff = float(cutoff)
        self.epsilon = float(epsilon)
        self.activation = activation
        self.alpha = alpha
        self.shortcut = bool(shortcut)
        self.inner = FarkasDenseLayer(self.n, self.hidden, agg=agg, cutoff=cutoff,
                                      epsilon=epsilon, activation=activation, alpha=alpha)
        self.W2 = Tensor(np.zeros((self.n, self.hidden)), requires_grad=True)
        self.b2 = Tensor(np.zeros(self.m), requires_grad=True)

    @property
    def lambda_(self):
        return certificate_lambda(self.m, self.agg)

    def parameters(self):
        return self.inner.parameters() + [self.W2, self.b2]

    def effective_bias(self):
        b = self.b2.data
        clamped = aggregate_bias(b, self.agg, self.cutoff, self.epsilon)
        return np.concatenate([b[:-1], [clamped]])

    def guaranteed_margin(self):
        """``lam @ b_eff`` for the outer layer (input independent only with a shortcut)."""
        return float(self.lambda_ @ self.effective_bias())

    def outer_system(self):
        """Outer pre-activation as an affine map of the stacked input ``[x; u]``.

        Returns ``(W, b)`` with ``W`` of shape ``(m, (m - 1) + hidden)``.
        """
        eye = np.eye(self.n)
        w2 = self.W2.data
        top = np.hstack([eye if self.shortcut else np.zeros_like(eye), w2])
        sum_rows = np.hstack([eye, w2])
        last = aggregate_rows(sum_rows, self.agg)
        return np.vstack([top, last[None, :]]), self.effective_bias()

    def preactivation(self, x):
        if x.ndim != 2 or x.shape[1] != self.n:
            raise DimensionError(f"expected input with {self.n} features, got shape {x.shape}")
        u = self.inner.forward(x)
        y = T.linear(u, self.W2)
        resid = x + y
        y_agg = T.reduce(resid, self.agg) * -1.0
        head, b_last = _aggregate_bias_tensor(self.b2, self.agg, self.cutoff, self.epsilon)
        trunk = resid if self.shortcut else y
        return T.add_bias(T.concat_last(trunk, y_agg), T.concat_last(head, b_last))

    def forward(self, x):
        return T.activate(self.preactivation(x), self.activation, self.alpha)

    __call__ = forward

    def certified_margin(self, x):
        """Per-row ``lam @ z``; a lower bound on each row's largest pre-activation."""
        with T.no_grad():
            z = self.preactivation(x if isinstance(x, Tensor) else Tensor(x)).data
        return z @ self.lambda_

    def __repr__(self):
        return (f"FarkasResidualBlock(m={self.m}, hidden={self.hidden}, agg={self.agg!r}, "
                f"shortcut={self.shortcut})")
